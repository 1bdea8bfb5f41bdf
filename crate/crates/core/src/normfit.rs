//! Duration-normalisation envelope and NAWP.
//!
//! The upper envelope `f_max(d) = a*d + b` is fitted through per-duration-bin
//! upper quantiles of average watch time; the lower envelope is fixed at 0.
//! NAWP rescales average watch time between the two and clamps to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::aggregate::VideoRecord;
use crate::error::{Error, Result};
use crate::evalkit;

/// Reference envelope slope measured on a large production corpus.
pub const REFERENCE_SLOPE: f64 = 0.556;
/// Reference envelope intercept in seconds.
pub const REFERENCE_INTERCEPT_S: f64 = 5.64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub bins_used: usize,
    pub residual_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeModel {
    pub slope_a: f64,
    pub intercept_b: f64,
    pub quantile_tau: f64,
    pub bin_width_s: f64,
    pub fit_stats: FitStats,
}

impl EnvelopeModel {
    /// The reference constants `f_max(d) = 0.556 d + 5.64`.
    pub fn reference() -> Self {
        Self::from_line(REFERENCE_SLOPE, REFERENCE_INTERCEPT_S)
    }

    /// An envelope given directly rather than fitted.
    pub fn from_line(slope_a: f64, intercept_b: f64) -> Self {
        EnvelopeModel {
            slope_a,
            intercept_b,
            quantile_tau: 0.97,
            bin_width_s: 1.0,
            fit_stats: FitStats { bins_used: 0, residual_rmse: 0.0 },
        }
    }

    pub fn f_max(&self, duration_s: f64) -> f64 {
        self.slope_a * duration_s + self.intercept_b
    }

    pub fn nawp(&self, awt_s: f64, duration_s: f64) -> Result<f64> {
        nawp(awt_s, duration_s, self)
    }
}

/// Normalised average watch percentage, clamped to `[0, 1]`.
pub fn nawp(awt_s: f64, duration_s: f64, env: &EnvelopeModel) -> Result<f64> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid(format!("duration {duration_s} must be positive")));
    }
    if !awt_s.is_finite() {
        return Err(Error::invalid("non-finite average watch time"));
    }
    let upper = env.f_max(duration_s);
    if !(upper.is_finite() && upper > 0.0) {
        return Err(Error::Degenerate(format!("f_max({duration_s}) = {upper} is not positive")));
    }
    // f_min is identically zero; the lower clamp only guards invalid input.
    Ok((awt_s / upper).clamp(0.0, 1.0))
}

/// Returns the records with `nawp` filled in, order preserved.
pub fn annotate_nawp(records: &[VideoRecord], env: &EnvelopeModel) -> Result<Vec<VideoRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(VideoRecord { nawp: Some(nawp(r.awt_s, r.duration_s, env)?), ..r.clone() })
        })
        .collect()
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) * tau`). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub quantile_tau: f64,
    pub bin_width_s: f64,
    pub min_bin_count: usize,
    pub duration_range_s: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            quantile_tau: 0.97,
            bin_width_s: 1.0,
            min_bin_count: 30,
            duration_range_s: (10.0, 60.0),
        }
    }
}

/// One duration bin that took part in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinPoint {
    pub midpoint_s: f64,
    pub count: usize,
    pub awt_quantile_s: f64,
}

/// Per-bin AWT quantiles for bins with at least `min_bin_count` records.
/// Bins are `[lo + k*w, lo + (k+1)*w)`, the last one closed at the window end.
pub fn bin_quantiles(records: &[VideoRecord], cfg: &FitConfig) -> Result<Vec<BinPoint>> {
    let (lo, hi) = cfg.duration_range_s;
    if !(cfg.bin_width_s > 0.0 && hi > lo) {
        return Err(Error::invalid("bin width and duration window must be positive"));
    }
    if !(cfg.quantile_tau > 0.0 && cfg.quantile_tau < 1.0) {
        return Err(Error::invalid(format!("quantile {} outside (0, 1)", cfg.quantile_tau)));
    }
    let n_bins = ((hi - lo) / cfg.bin_width_s).ceil() as usize;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for r in records {
        if !(r.duration_s >= lo && r.duration_s <= hi) {
            return Err(Error::invalid(format!(
                "{}: duration {} outside [{lo}, {hi}]",
                r.video_id, r.duration_s
            )));
        }
        let k = (((r.duration_s - lo) / cfg.bin_width_s).floor() as usize).min(n_bins - 1);
        bins[k].push(r.awt_s);
    }
    Ok(bins
        .into_iter()
        .enumerate()
        .filter(|(_, b)| b.len() >= cfg.min_bin_count.max(1))
        .map(|(k, mut b)| {
            b.sort_by(f64::total_cmp);
            BinPoint {
                midpoint_s: lo + (k as f64 + 0.5) * cfg.bin_width_s,
                count: b.len(),
                awt_quantile_s: quantile_sorted(&b, cfg.quantile_tau),
            }
        })
        .collect())
}

/// Ordinary least squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if x.len() < 2 || sxx == 0.0 {
        return Err(Error::FitFailure("need at least two distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

pub fn fit_envelope(records: &[VideoRecord], cfg: &FitConfig) -> Result<EnvelopeModel> {
    if records.is_empty() {
        return Err(Error::FitFailure("no records".into()));
    }
    let points = bin_quantiles(records, cfg)?;
    if points.len() < 2 {
        return Err(Error::FitFailure(format!(
            "{} bin(s) with at least {} records; need 2",
            points.len(),
            cfg.min_bin_count
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.midpoint_s).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.awt_quantile_s).collect();
    let (slope_a, intercept_b) = ols_line(&xs, &ys)?;
    let sq: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (slope_a * x + intercept_b - y).powi(2))
        .sum();
    let model = EnvelopeModel {
        slope_a,
        intercept_b,
        quantile_tau: cfg.quantile_tau,
        bin_width_s: cfg.bin_width_s,
        fit_stats: FitStats { bins_used: points.len(), residual_rmse: (sq / xs.len() as f64).sqrt() },
    };
    let (lo, hi) = cfg.duration_range_s;
    if model.f_max(lo) <= 0.0 || model.f_max(hi) <= 0.0 {
        return Err(Error::FitFailure(format!(
            "fitted envelope {slope_a} d + {intercept_b} is not positive on [{lo}, {hi}]"
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub metric_name: String,
    pub n: usize,
    pub histogram: Histogram,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub bimodality_coefficient: f64,
}

/// Sample skewness and excess kurtosis with the usual small-sample
/// corrections (G1, G2).
pub fn sample_shape(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 values, got {n}")));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skew = (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1;
    let kurt = (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0);
    Ok((skew, kurt))
}

/// `(skew^2 + 1) / (kurt + 3 (n-1)^2 / ((n-2)(n-3)))`; values above 5/9
/// suggest bimodality.
pub fn bimodality_coefficient(values: &[f64]) -> Result<f64> {
    let (skew, kurt) = sample_shape(values)?;
    let n = values.len() as f64;
    Ok((skew * skew + 1.0) / (kurt + 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0))))
}

pub fn distribution_report(name: &str, values: &[f64], bins: usize) -> Result<DistributionReport> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in distribution"));
    }
    let (skew, kurt) = sample_shape(values)?;
    let bc = bimodality_coefficient(values)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { max } else { min + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    for v in values {
        let k = (((v - min) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(DistributionReport {
        metric_name: name.to_string(),
        n: values.len(),
        histogram: Histogram { edges, counts },
        skewness: skew,
        excess_kurtosis: kurt,
        bimodality_coefficient: bc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub n: usize,
    pub srcc_ecr_nawp: f64,
    pub plcc_ecr_nawp: f64,
}

/// Correlation between ECR and NAWP over records that carry a NAWP value.
pub fn metric_correlation(records: &[VideoRecord]) -> Result<MetricCorrelation> {
    let (ecr, nawp): (Vec<f64>, Vec<f64>) =
        records.iter().filter_map(|r| r.nawp.map(|n| (r.ecr, n))).unzip();
    if ecr.len() < 3 {
        return Err(Error::invalid(format!("need 3 records with NAWP, got {}", ecr.len())));
    }
    Ok(MetricCorrelation {
        n: ecr.len(),
        srcc_ecr_nawp: evalkit::srcc(&ecr, &nawp)?,
        plcc_ecr_nawp: evalkit::plcc(&ecr, &nawp)?,
    })
}
