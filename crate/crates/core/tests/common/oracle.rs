//! Independent reference implementations: exact rational arithmetic and
//! brute force, sharing no code with the library.

use std::collections::{BTreeMap, HashMap};

use engagekit::aggregate::AggregateConfig;
use engagekit::{VideoMeta, VideoRecord, WatchEvent};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Correctly rounded sum.
pub fn exact_sum(values: &[f64]) -> f64 {
    values.iter().map(|&v| exact(v)).fold(BigRational::zero(), |a, b| a + b).to_f64().unwrap()
}

struct Naive {
    views: u64,
    watch: Vec<f64>,
    above: u64,
    like_flags: u64,
    likes: u64,
}

/// Straightforward single pass: keep every watch time, sum exactly at the end.
/// Returns the accepted records (sorted by id) and the number filtered out.
pub fn reference_aggregate(
    events: &[WatchEvent],
    metas: &[VideoMeta],
    cfg: &AggregateConfig,
) -> (Vec<VideoRecord>, usize) {
    let meta: HashMap<&str, &VideoMeta> = metas.iter().map(|m| (m.video_id.as_str(), m)).collect();
    let mut acc: BTreeMap<&str, Naive> = BTreeMap::new();
    for e in events {
        if !meta.contains_key(e.video_id.as_str()) {
            continue;
        }
        let a = acc.entry(&e.video_id).or_insert(Naive { views: 0, watch: vec![], above: 0, like_flags: 0, likes: 0 });
        a.views += 1;
        a.watch.push(e.watch_time_s);
        a.above += u64::from(e.watch_time_s > cfg.ecr_threshold_s);
        if let Some(l) = e.liked {
            a.like_flags += 1;
            a.likes += u64::from(l);
        }
    }
    let mut out = Vec::new();
    let mut excluded = 0;
    for (id, a) in acc {
        let d = meta[id].duration_s;
        let max = a.watch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let awt = (exact_sum(&a.watch) / a.views as f64).min(max);
        let r = VideoRecord {
            video_id: id.to_string(),
            duration_s: d,
            views: a.views,
            awt_s: awt,
            awp: awt / d,
            ecr: a.above as f64 / a.views as f64,
            like_rate: (a.like_flags > 0).then(|| a.likes as f64 / a.views as f64),
            nawp: None,
        };
        let (lo, hi) = cfg.duration_range_s;
        if a.views >= cfg.min_views && d >= lo && d <= hi {
            out.push(r);
        } else {
            excluded += 1;
        }
    }
    (out, excluded)
}

/// Average ranks by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn count_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation from exact rational moments: r^2 is formed exactly
/// and only the final square root is rounded.
pub fn exact_plcc(x: &[f64], y: &[f64]) -> f64 {
    let n = BigRational::from_integer(BigInt::from(x.len()));
    let xs: Vec<BigRational> = x.iter().map(|&v| exact(v)).collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| exact(v)).collect();
    let mx = xs.iter().fold(BigRational::zero(), |a, b| a + b) / &n;
    let my = ys.iter().fold(BigRational::zero(), |a, b| a + b) / &n;
    let (mut sxy, mut sxx, mut syy) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (a, b) in xs.iter().zip(&ys) {
        let (da, db) = (a - &mx, b - &my);
        sxy += &da * &db;
        sxx += &da * &da;
        syy += &db * &db;
    }
    let r2 = (&sxy * &sxy) / (sxx * syy);
    let r = r2.to_f64().unwrap().sqrt();
    if sxy.is_negative() {
        -r
    } else {
        r
    }
}

pub fn exact_srcc(x: &[f64], y: &[f64]) -> f64 {
    exact_plcc(&count_ranks(x), &count_ranks(y))
}

pub fn exact_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let sq = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = exact(p) - exact(t);
            &d * &d
        })
        .fold(BigRational::zero(), |a, b| a + b);
    (sq / BigRational::from_integer(BigInt::from(pred.len()))).to_f64().unwrap().sqrt()
}

/// Top-K by repeated selection of the largest remaining truth (smallest id on
/// ties); K is a whole percentage so the count is integer division.
pub fn brute_rmse_topk(pred: &[f64], truth: &[f64], ids: &[&str], k_percent: u64) -> f64 {
    let count = (k_percent as usize * pred.len()) / 100;
    let mut taken = vec![false; pred.len()];
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let mut best: Option<usize> = None;
        for i in (0..pred.len()).filter(|&i| !taken[i]) {
            best = match best {
                Some(b) if truth[b] > truth[i] || (truth[b] == truth[i] && ids[b] < ids[i]) => Some(b),
                _ => Some(i),
            };
        }
        let b = best.unwrap();
        taken[b] = true;
        p.push(pred[b]);
        t.push(truth[b]);
    }
    exact_rmse(&p, &t)
}
