mod common;

use common::oracle::{brute_rmse_topk, exact_plcc, exact_rmse, exact_srcc};
use engagekit::evalkit::{plcc, rmse, rmse_topk, srcc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random vectors; every third one is drawn from a handful of levels so that
/// ties are common.
fn vectors(count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..count)
        .map(|k| {
            let n = rng.random_range(3..80);
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                if k % 3 == 0 {
                    f64::from(rng.random_range(0..4u8)) / 4.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            };
            let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + 0.5 * draw(&mut rng)).collect();
            (x, y)
        })
        .filter(|(x, y)| x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]))
        .collect()
}

#[test]
fn metrics_match_exact_oracles() {
    let cases = vectors(110);
    assert!(cases.len() >= 100);
    for (x, y) in &cases {
        let ids: Vec<String> = (0..x.len()).map(|i| format!("v{:03}", (i * 37) % 101)).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert!((srcc(x, y).unwrap() - exact_srcc(x, y)).abs() <= 1e-12);
        assert!((plcc(x, y).unwrap() - exact_plcc(x, y)).abs() <= 1e-12);
        assert!((rmse(x, y).unwrap() - exact_rmse(x, y)).abs() <= 1e-12);
        for k in [10, 25, 50, 100] {
            if k * x.len() / 100 == 0 {
                continue;
            }
            let got = rmse_topk(x, y, &ids, k as f64).unwrap();
            assert!((got - brute_rmse_topk(x, y, &ids, k as u64)).abs() <= 1e-12, "K={k}");
        }
        assert_eq!(rmse_topk(x, y, &ids, 100.0).unwrap(), rmse(x, y).unwrap());
    }
}

#[test]
fn topk_ties_resolve_by_id() {
    let truth = [1.0, 1.0, 1.0, 0.0];
    let pred = [0.0, 0.5, 1.0, 0.0];
    // top 50% of 4 = 2 videos among three tied at 1.0: ids "a" and "b"
    let got = rmse_topk(&pred, &truth, &["c", "a", "b", "d"], 50.0).unwrap();
    assert_eq!(got, (0.5f64.powi(2) / 2.0).sqrt());
}

fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, n)
}

proptest! {
    #[test]
    fn srcc_ignores_monotone_transforms(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..60)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]));
        let base = srcc(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let fy: Vec<f64> = y.iter().map(|v| v * v * v + 2.0 * v).collect();
        prop_assert!((srcc(&fx, &fy).unwrap() - base).abs() < 1e-12);
        prop_assert_eq!(srcc(&y, &x).unwrap(), base);
    }

    #[test]
    fn plcc_ignores_positive_affine_maps(x in finite_vec(3..60), seed in any::<u64>(), a in 0.01..100.0f64, b in -100.0..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-300.0..300.0)).collect();
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let base = plcc(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((plcc(&ax, &y).unwrap() - base).abs() < 1e-9);
        prop_assert!((plcc(&y, &x).unwrap() - base).abs() < 1e-15);
        prop_assert!(base.abs() <= 1.0);
    }

    #[test]
    fn topk_at_100_percent_is_rmse(pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..50)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ids: Vec<String> = (0..p.len()).map(|i| i.to_string()).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        prop_assert_eq!(rmse_topk(&p, &t, &ids, 100.0).unwrap(), rmse(&p, &t).unwrap());
    }
}
