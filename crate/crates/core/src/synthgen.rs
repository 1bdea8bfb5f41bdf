//! Synthetic corpora with planted, recoverable structure.
//!
//! Every video draws a quality latent `q` from a two-component Gaussian
//! mixture and a hook latent `u` coupled to it. A view is "engaged" with
//! probability `p = clamp(q, 0, 1)` and then watches `U[0.5 e, 1.2 e]` seconds,
//! where `e = f_max(d) / 0.85` puts the mean engaged watch time exactly on
//! the envelope. Otherwise the viewer skips after `Exp(mean 0.5 + 3u)`
//! seconds. AWT, its per-view spread and P(watch > 5 s) are all closed form,
//! so each video's ground truth is known exactly; fully engaged videos sit
//! on the envelope, which is what the upper-quantile fit recovers.
//!
//! Features are fixed random linear maps of `(q, u, d/60, clip position, 1)`
//! plus Gaussian noise; text tokens come from a vocabulary partitioned into
//! quality bands.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{write_jsonl, VideoMeta, VideoRecord, WatchEvent};
use crate::error::{Error, Result};
use crate::evalkit;
use crate::model::{n_clips_for, FeatureBundle, FeatureKind, ManifestRow};
use crate::normfit::{EnvelopeModel, REFERENCE_INTERCEPT_S, REFERENCE_SLOPE};
use crate::numcore::Tensor;
use crate::trainer::{split_dataset, Sample};

/// Mean engaged watch time as a fraction of `e`: `(0.5 + 1.2) / 2`.
const ENGAGED_MEAN_FRACTION: f64 = 0.85;
const ENGAGED_LOW: f64 = 0.5;
const ENGAGED_HIGH: f64 = 1.2;
const FEATURE_SALT: u64 = 0x5eed_f00d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub views_per_video: usize,
    pub duration_range_s: (f64, f64),
    /// Durations are drawn from the centres of a grid with this spacing.
    pub duration_grid_s: f64,
    pub frame_rate: f64,
    pub clip_len: usize,
    pub mixture: [MixtureComponent; 2],
    pub envelope_a: f64,
    pub envelope_b: f64,
    /// Coupling of the hook latent to quality, in `[0, 1]`.
    pub rho: f64,
    pub feature_noise: f64,
    pub feature_dim: usize,
    pub text_tokens: usize,
    pub vocab_size: usize,
    pub quality_bands: usize,
    pub in_band_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 500,
            views_per_video: 300,
            duration_range_s: (10.0, 60.0),
            duration_grid_s: 5.0,
            frame_rate: 8.0,
            clip_len: 16,
            mixture: [
                MixtureComponent { weight: 0.5, mean: 0.12, sd: 0.08 },
                MixtureComponent { weight: 0.5, mean: 0.95, sd: 0.12 },
            ],
            envelope_a: REFERENCE_SLOPE,
            envelope_b: REFERENCE_INTERCEPT_S,
            rho: 0.5,
            feature_noise: 0.5,
            feature_dim: 64,
            text_tokens: 8,
            vocab_size: 32,
            quality_bands: 4,
            in_band_prob: 0.75,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let w: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if (w - 1.0).abs() > 1e-9 || self.mixture.iter().any(|c| c.weight < 0.0 || c.sd < 0.0) {
            return Err(Error::invalid("mixture weights must be non-negative and sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid("rho must lie in [0, 1]"));
        }
        if !self.feature_noise.is_finite() || self.feature_noise < 0.0 {
            return Err(Error::invalid("feature noise must be non-negative"));
        }
        if self.n_videos == 0 || self.views_per_video == 0 || self.feature_dim == 0 || self.text_tokens == 0 {
            return Err(Error::invalid("counts must be positive"));
        }
        if self.quality_bands == 0 || self.vocab_size < self.quality_bands {
            return Err(Error::invalid("vocabulary must hold at least one word per band"));
        }
        let (lo, hi) = self.duration_range_s;
        if !(lo > 0.0 && hi > lo && self.duration_grid_s > 0.0 && self.duration_grid_s <= hi - lo) {
            return Err(Error::invalid("bad duration range or grid"));
        }
        if n_clips_for(lo + self.duration_grid_s / 2.0, self.frame_rate, self.clip_len) == 0 {
            return Err(Error::invalid("shortest video would have no whole clip"));
        }
        if self.envelope_a * lo + self.envelope_b <= 0.0 || self.envelope_a * hi + self.envelope_b <= 0.0 {
            return Err(Error::invalid("envelope must be positive over the duration range"));
        }
        Ok(())
    }

    pub fn envelope(&self) -> EnvelopeModel {
        EnvelopeModel::from_line(self.envelope_a, self.envelope_b)
    }

    pub fn duration_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.duration_range_s;
        let n = ((hi - lo) / self.duration_grid_s + 1e-9).floor() as usize;
        (0..n).map(|k| lo + (k as f64 + 0.5) * self.duration_grid_s).collect()
    }
}

/// Planted latents and closed-form ground truth for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVideo {
    /// Ground truth with `nawp` filled from the planted envelope.
    pub record: VideoRecord,
    pub quality: f64,
    pub hook: f64,
    pub engaged_prob: f64,
    pub skip_mean_s: f64,
    /// Standard deviation of a single view's watch time.
    pub watch_sd_s: f64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub events: Vec<WatchEvent>,
    pub metas: Vec<VideoMeta>,
    pub videos: Vec<SynthVideo>,
}

impl SynthCorpus {
    pub fn truth_records(&self) -> Vec<VideoRecord> {
        self.videos.iter().map(|v| v.record.clone()).collect()
    }

    /// ECR-NAWP rank correlation implied by the planted model.
    pub fn truth_correlation(&self) -> Result<f64> {
        let ecr: Vec<f64> = self.videos.iter().map(|v| v.record.ecr).collect();
        let nawp: Vec<f64> = self.videos.iter().filter_map(|v| v.record.nawp).collect();
        evalkit::srcc(&ecr, &nawp)
    }
}

pub fn video_id(i: usize) -> String {
    format!("vid{i:05}")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Closed-form moments of one video's watch-time mixture.
fn video_truth(cfg: &SynthConfig, id: String, d: f64, q: f64, u: f64) -> Result<SynthVideo> {
    let p = q.clamp(0.0, 1.0);
    let mu = 0.5 + 3.0 * u;
    let f = cfg.envelope_a * d + cfg.envelope_b;
    let e = f / ENGAGED_MEAN_FRACTION;
    let (lo, hi) = (ENGAGED_LOW * e, ENGAGED_HIGH * e);

    let awt = (1.0 - p) * mu + p * f;
    let second = (1.0 - p) * 2.0 * mu * mu + p * (lo * lo + lo * hi + hi * hi) / 3.0;
    let engaged_over = ((hi - 5.0) / (hi - lo)).clamp(0.0, 1.0);
    let ecr = (1.0 - p) * (-5.0 / mu).exp() + p * engaged_over;
    let record = VideoRecord {
        video_id: id,
        duration_s: d,
        views: cfg.views_per_video as u64,
        awt_s: awt,
        awp: awt / d,
        ecr,
        like_rate: None,
        nawp: Some(cfg.envelope().nawp(awt, d)?),
    };
    Ok(SynthVideo {
        record,
        quality: q,
        hook: u,
        engaged_prob: p,
        skip_mean_s: mu,
        watch_sd_s: (second - awt * awt).max(0.0).sqrt(),
    })
}

/// Draws the corpus: per video, latents and every view come from the
/// video's own random stream, so videos are independent of each other and
/// of generation order.
pub fn generate_events(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let grid = cfg.duration_grid();
    let mut events = Vec::with_capacity(cfg.n_videos * cfg.views_per_video);
    let mut metas = Vec::with_capacity(cfg.n_videos);
    let mut videos = Vec::with_capacity(cfg.n_videos);
    for i in 0..cfg.n_videos {
        let mut rng = stream_rng(cfg.seed, i as u64 + 1);
        let id = video_id(i);
        let d = grid[rng.random_range(0..grid.len())];
        let comp = &cfg.mixture[usize::from(rng.random::<f64>() >= cfg.mixture[0].weight)];
        let q = comp.mean + comp.sd * rng.sample::<f64, _>(StandardNormal);
        let p = q.clamp(0.0, 1.0);
        let u = cfg.rho * p + (1.0 - cfg.rho) * rng.random::<f64>();
        let truth = video_truth(cfg, id.clone(), d, q, u)?;

        let e = (cfg.envelope_a * d + cfg.envelope_b) / ENGAGED_MEAN_FRACTION;
        let skip = Exp::new(1.0 / truth.skip_mean_s).map_err(|e| Error::invalid(e.to_string()))?;
        for _ in 0..cfg.views_per_video {
            let w = if rng.random::<f64>() < p {
                rng.random_range(ENGAGED_LOW * e..ENGAGED_HIGH * e)
            } else {
                skip.sample(&mut rng)
            };
            events.push(WatchEvent { video_id: id.clone(), watch_time_s: w, liked: None });
        }
        metas.push(VideoMeta { video_id: id, duration_s: d, frame_rate: cfg.frame_rate });
        videos.push(truth);
    }
    Ok(SynthCorpus { events, metas, videos })
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Vec<f64> {
    let n = Normal::new(0.0, sd).expect("finite sd");
    (0..rows * cols).map(|_| n.sample(rng)).collect()
}

/// Quality band of an engagement probability.
fn band(p: f64, bands: usize) -> usize {
    ((p * bands as f64).floor() as usize).min(bands - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub lambda: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub srcc_nawp: f64,
    pub srcc_ecr: f64,
}

#[derive(Debug, Clone)]
pub struct SynthFeatures {
    pub samples: Vec<Sample>,
    pub oracle: OracleReport,
}

pub const ORACLE_LAMBDA: f64 = 10.0;

/// Feature bundles and a labelled manifest for the corpus' videos, plus the
/// ridge-oracle ceiling on a 90/10 split.
pub fn generate_features(videos: &[SynthVideo], cfg: &SynthConfig) -> Result<SynthFeatures> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let kinds: Vec<FeatureKind> = FeatureKind::ALL.into_iter().filter(|k| k.is_visual()).collect();
    let fseed = cfg.seed ^ FEATURE_SALT;
    let mut shared = stream_rng(fseed, 0);
    let maps: Vec<Vec<f64>> = kinds.iter().map(|_| normal_matrix(&mut shared, 5, dim, (0.2f64).sqrt())).collect();
    let vocab = normal_matrix(&mut shared, cfg.vocab_size, dim, 1.0);
    let words_per_band = cfg.vocab_size / cfg.quality_bands;
    let noise = Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::invalid(e.to_string()))?;

    let mut samples = Vec::with_capacity(videos.len());
    for (i, v) in videos.iter().enumerate() {
        let mut rng = stream_rng(fseed, i as u64 + 1);
        let r = &v.record;
        let n = n_clips_for(r.duration_s, cfg.frame_rate, cfg.clip_len);
        if n == 0 {
            return Err(Error::invalid(format!("{}: shorter than one clip", r.video_id)));
        }
        let mut features = BTreeMap::new();
        for (kind, w) in kinds.iter().zip(&maps) {
            let mut data = Vec::with_capacity(n * dim);
            for c in 0..n {
                let z = [v.quality, v.hook, r.duration_s / 60.0, (c as f64 + 0.5) / n as f64, 1.0];
                for j in 0..dim {
                    let clean: f64 = (0..5).map(|k| z[k] * w[k * dim + j]).sum();
                    data.push(clean + noise.sample(&mut rng));
                }
            }
            features.insert(*kind, Tensor::matrix(n, dim, data)?);
        }
        let b = band(v.engaged_prob, cfg.quality_bands);
        let mut text = Vec::with_capacity(cfg.text_tokens * dim);
        for _ in 0..cfg.text_tokens {
            let word = if rng.random::<f64>() < cfg.in_band_prob {
                b * words_per_band + rng.random_range(0..words_per_band)
            } else {
                rng.random_range(0..cfg.vocab_size)
            };
            text.extend_from_slice(&vocab[word * dim..(word + 1) * dim]);
        }
        features.insert(FeatureKind::Text, Tensor::matrix(cfg.text_tokens, dim, text)?);
        let bundle = FeatureBundle::new(r.video_id.clone(), cfg.frame_rate, features)?;
        let row = ManifestRow {
            video_id: r.video_id.clone(),
            duration_s: r.duration_s,
            frame_rate: cfg.frame_rate,
            feature_path: format!("features/{}.engf", r.video_id),
            nawp_label: r.nawp,
            ecr_label: Some(r.ecr),
            awt_label: Some(r.awt_s),
            awp_label: Some(r.awp),
        };
        samples.push(Sample { row, bundle });
    }

    let design: Vec<Vec<f64>> = samples.iter().map(|s| oracle_design_row(&s.bundle)).collect();
    let ids: Vec<String> = samples.iter().map(|s| s.row.video_id.clone()).collect();
    let (train, test) = split_indices(&ids, 0.9, cfg.seed)?;
    let nawp: Vec<f64> = videos.iter().map(|v| v.record.nawp.unwrap_or(0.0)).collect();
    let ecr: Vec<f64> = videos.iter().map(|v| v.record.ecr).collect();
    let oracle = OracleReport {
        lambda: ORACLE_LAMBDA,
        n_train: train.len(),
        n_test: test.len(),
        srcc_nawp: ridge_srcc(&design, &nawp, &train, &test, ORACLE_LAMBDA)?,
        srcc_ecr: ridge_srcc(&design, &ecr, &train, &test, ORACLE_LAMBDA)?,
    };
    Ok(SynthFeatures { samples, oracle })
}

/// Index form of [`split_dataset`].
pub fn split_indices(ids: &[String], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let (train, test) = split_dataset(ids, ratio, seed)?;
    let to_idx = |v: Vec<String>| v.iter().map(|s| pos[s.as_str()]).collect();
    Ok((to_idx(train), to_idx(test)))
}

/// Oracle regressors: clip-averaged visual features, averaged text tokens
/// and a constant.
pub fn oracle_design_row(bundle: &FeatureBundle) -> Vec<f64> {
    let mut row = Vec::new();
    for t in bundle.features.values() {
        let (n, d) = (t.rows(), t.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(t.row_slice(i)) {
                *m += v / n as f64;
            }
        }
        row.extend(mean);
    }
    row.push(1.0);
    row
}

/// Fits ridge regression on the `train` rows and returns the SRCC of its
/// predictions on the `test` rows.
pub fn ridge_srcc(x: &[Vec<f64>], y: &[f64], train: &[usize], test: &[usize], lambda: f64) -> Result<f64> {
    let w = ridge_fit(x, y, train, lambda)?;
    let pred: Vec<f64> = test.iter().map(|&i| x[i].iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    evalkit::srcc(&pred, &truth)
}

/// Solves `(X'X + lambda I) w = X'y` over the selected rows.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], rows: &[usize], lambda: f64) -> Result<Vec<f64>> {
    let p = x.first().map_or(0, Vec::len);
    if rows.is_empty() || p == 0 {
        return Err(Error::invalid("ridge regression needs rows and columns"));
    }
    let xm = DMatrix::from_fn(rows.len(), p, |r, c| x[rows[r]][c]);
    let yv = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    let gram = xm.transpose() * &xm + DMatrix::identity(p, p) * lambda;
    let rhs = xm.transpose() * yv;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ridge normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Writes the corpus in the pipeline's file formats:
/// `events.jsonl`, `metas.jsonl`, `truth.jsonl`, `manifest.jsonl`,
/// `features/<id>.engf` and `oracle.json`.
pub fn write_corpus(dir: &Path, corpus: &SynthCorpus, features: &SynthFeatures) -> Result<()> {
    fs::create_dir_all(dir.join("features"))?;
    let create = |name: &str| -> Result<BufWriter<fs::File>> { Ok(BufWriter::new(fs::File::create(dir.join(name))?)) };
    write_jsonl(create("events.jsonl")?, &corpus.events)?;
    write_jsonl(create("metas.jsonl")?, &corpus.metas)?;
    write_jsonl(create("truth.jsonl")?, &corpus.videos)?;
    let rows: Vec<ManifestRow> = features.samples.iter().map(|s| s.row.clone()).collect();
    write_jsonl(create("manifest.jsonl")?, &rows)?;
    for s in &features.samples {
        s.bundle.save(&dir.join(&s.row.feature_path))?;
    }
    serde_json::to_writer_pretty(create("oracle.json")?, &features.oracle)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_videos: 40, views_per_video: 50, feature_dim: 6, ..SynthConfig::default() }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_events(&small()).unwrap();
        let b = generate_events(&small()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.videos, b.videos);
        let c = generate_events(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.videos, c.videos);
    }

    #[test]
    fn videos_do_not_depend_on_corpus_size() {
        let a = generate_events(&small()).unwrap();
        let b = generate_events(&SynthConfig { n_videos: 10, ..small() }).unwrap();
        assert_eq!(a.videos[..10], b.videos[..]);
    }

    #[test]
    fn truth_ranges() {
        let c = generate_events(&small()).unwrap();
        for v in &c.videos {
            let r = &v.record;
            assert!((10.0..=60.0).contains(&r.duration_s));
            assert!((0.0..=1.0).contains(&r.ecr));
            let n = r.nawp.unwrap();
            assert!((0.0..=1.0).contains(&n));
            assert_eq!(n == 1.0, v.engaged_prob == 1.0);
        }
        assert_eq!(c.events.len(), 40 * 50);
    }

    #[test]
    fn unengaged_unhooked_video_has_tiny_ecr() {
        let v = video_truth(&SynthConfig::default(), "x".into(), 30.0, -0.2, 0.0).unwrap();
        assert!(v.record.ecr < 1e-4);
        assert_eq!(v.record.awt_s, 0.5);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small();
        cfg.mixture[0].weight = 0.7;
        assert!(cfg.validate().is_err());
        assert!(SynthConfig { rho: 1.5, ..small() }.validate().is_err());
        assert!(SynthConfig { feature_noise: -1.0, ..small() }.validate().is_err());
    }

    #[test]
    fn features_match_clip_counts() {
        let cfg = small();
        let c = generate_events(&cfg).unwrap();
        let f = generate_features(&c.videos, &cfg).unwrap();
        for (s, v) in f.samples.iter().zip(&c.videos) {
            assert_eq!(s.bundle.n_clips, n_clips_for(v.record.duration_s, 8.0, 16));
            assert_eq!(s.bundle.get(FeatureKind::Text).unwrap().shape(), [8, 6]);
        }
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64, 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
        let rows: Vec<usize> = (0..20).collect();
        let w = ridge_fit(&x, &y, &rows, 1e-12).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-8 && (w[1] + 1.0).abs() < 1e-8 && (w[2] - 0.5).abs() < 1e-8);
    }
}
