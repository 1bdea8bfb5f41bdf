//! Correlation and error metrics for engagement predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(op: &str, x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("{op}: lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < min_len {
        return Err(Error::invalid(format!("{op}: need at least {min_len} values, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{op}: non-finite input")));
    }
    Ok(())
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("plcc", x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sequence".into()));
    }
    // sqrt(a * a) == a exactly, so identical inputs give exactly 1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("srcc", x, y, 2)?;
    plcc(&fractional_ranks(x), &fractional_ranks(y))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("rmse", pred, truth, 1)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Number of videos in the top `k_percent` of `n`, rounded down.
pub fn topk_count(n: usize, k_percent: f64) -> usize {
    // The small slack keeps exact products such as 10% of 30 from
    // rounding down to 2.
    ((k_percent * n as f64 / 100.0) + 1e-9).floor() as usize
}

/// RMSE over the `floor(K * N / 100)` videos with the highest ground truth.
/// Equal ground-truth values are ordered by ascending id.
pub fn rmse_topk(pred: &[f64], truth: &[f64], ids: &[&str], k_percent: f64) -> Result<f64> {
    check_pair("rmse_topk", pred, truth, 1)?;
    if ids.len() != pred.len() {
        return Err(Error::invalid("rmse_topk: ids and values differ in length"));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::invalid(format!("rmse_topk: K={k_percent} outside (0, 100]")));
    }
    let count = topk_count(pred.len(), k_percent);
    if count == 0 {
        return Err(Error::invalid(format!(
            "rmse_topk: top {k_percent}% of {} videos selects nothing",
            pred.len()
        )));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]).then_with(|| ids[a].cmp(ids[b])));
    // Summing in input order makes K = 100 reproduce `rmse` bit for bit.
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    let sq: f64 = chosen.iter().map(|&i| (pred[i] - truth[i]) * (pred[i] - truth[i])).sum();
    Ok((sq / count as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub lower_s: f64,
    pub upper_s: f64,
    pub n: usize,
    pub srcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSrcc {
    pub group_width_s: f64,
    pub groups: Vec<GroupScore>,
    pub average: f64,
}

/// Groups with fewer members than this are ignored.
pub const MIN_GROUP_SIZE: usize = 3;

/// SRCC computed within duration groups `[k*w, (k+1)*w)` and averaged without
/// weighting. Groups with fewer than three members or constant values are
/// skipped.
pub fn grouped_srcc(
    pred: &[f64],
    truth: &[f64],
    durations: &[f64],
    group_width_s: f64,
) -> Result<GroupedSrcc> {
    check_pair("grouped_srcc", pred, truth, 1)?;
    if durations.len() != pred.len() {
        return Err(Error::invalid("grouped_srcc: durations and values differ in length"));
    }
    if !(group_width_s.is_finite() && group_width_s > 0.0) {
        return Err(Error::invalid("grouped_srcc: group width must be positive"));
    }
    let mut buckets: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for (i, &d) in durations.iter().enumerate() {
        buckets.entry((d / group_width_s).floor() as i64).or_default().push(i);
    }
    let mut groups = Vec::new();
    for (k, members) in buckets {
        if members.len() < MIN_GROUP_SIZE {
            continue;
        }
        let p: Vec<f64> = members.iter().map(|&i| pred[i]).collect();
        let t: Vec<f64> = members.iter().map(|&i| truth[i]).collect();
        match srcc(&p, &t) {
            Ok(s) => groups.push(GroupScore {
                lower_s: k as f64 * group_width_s,
                upper_s: (k + 1) as f64 * group_width_s,
                n: members.len(),
                srcc: s,
            }),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if groups.is_empty() {
        return Err(Error::Degenerate("no duration group qualifies for SRCC".into()));
    }
    let average = groups.iter().map(|g| g.srcc).sum::<f64>() / groups.len() as f64;
    Ok(GroupedSrcc { group_width_s, groups, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub srcc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub rmse_topk: f64,
}

impl MetricScores {
    pub fn compute(pred: &[f64], truth: &[f64], ids: &[&str], k_percent: f64) -> Result<Self> {
        Ok(MetricScores {
            srcc: srcc(pred, truth)?,
            plcc: plcc(pred, truth)?,
            rmse: rmse(pred, truth)?,
            rmse_topk: rmse_topk(pred, truth, ids, k_percent)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nawp: MetricScores,
    pub ecr: MetricScores,
    pub k_percent: f64,
    pub n: usize,
    pub grouped_srcc: Option<GroupedSrcc>,
}

/// Predicted and ground-truth values for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub video_id: String,
    pub duration_s: f64,
    pub nawp_hat: f64,
    pub ecr_hat: f64,
    pub nawp: f64,
    pub ecr: f64,
}

/// Full report over aligned rows. `group_width_s` adds the duration-grouped
/// SRCC of the first metric.
pub fn evaluate(rows: &[EvalRow], k_percent: f64, group_width_s: Option<f64>) -> Result<EvalReport> {
    if rows.len() < 2 {
        return Err(Error::invalid(format!("evaluation needs at least 2 rows, got {}", rows.len())));
    }
    let ids: Vec<&str> = rows.iter().map(|r| r.video_id.as_str()).collect();
    let col = |f: fn(&EvalRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (nawp_hat, nawp) = (col(|r| r.nawp_hat), col(|r| r.nawp));
    let (ecr_hat, ecr) = (col(|r| r.ecr_hat), col(|r| r.ecr));
    let grouped = group_width_s
        .map(|w| grouped_srcc(&nawp_hat, &nawp, &col(|r| r.duration_s), w))
        .transpose()?;
    Ok(EvalReport {
        nawp: MetricScores::compute(&nawp_hat, &nawp, &ids, k_percent)?,
        ecr: MetricScores::compute(&ecr_hat, &ecr, &ids, k_percent)?,
        k_percent,
        n: rows.len(),
        grouped_srcc: grouped,
    })
}
