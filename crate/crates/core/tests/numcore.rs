use std::sync::Arc;

use engagekit::numcore::io::{load_checkpoint, save_checkpoint};
use engagekit::numcore::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0..50.0f64, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..9).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in shaped()) {
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax_rows(v).unwrap();
        let out = g.value(s);
        for i in 0..out.rows() {
            let sum: f64 = out.row_slice(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(out.row_slice(i).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    /// With eps = 0 each row is standardised exactly; rows that are (near)
    /// constant are excluded since their variance is not meaningful.
    #[test]
    fn layer_norm_standardises_rows(x in shaped()) {
        let spread = (0..x.rows()).all(|i| {
            let r = x.row_slice(i);
            r.iter().any(|v| (v - r[0]).abs() > 1e-3)
        });
        prop_assume!(spread);
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = g.layer_norm(v, 0.0).unwrap();
        let out = g.value(y);
        for i in 0..out.rows() {
            let r = out.row_slice(i);
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_with_zero_lr_changes_nothing(p in shaped(), seed in -5.0..5.0f64) {
        let grad = Tensor::filled(p.rows(), p.cols(), seed);
        let mut params = vec![p.clone()];
        let mut state = AdamState::new(&params);
        for _ in 0..3 {
            let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
            adam_step(&mut refs, &[&grad], &mut state, 0.0, &AdamConfig::default()).unwrap();
        }
        prop_assert_eq!(&params[0], &p);
        prop_assert_eq!(state.step, 3);
    }

    #[test]
    fn arrays_round_trip_bit_exactly(ts in prop::collection::vec(shaped(), 1..5), odd in any::<f64>()) {
        let mut ts = ts;
        ts[0].data_mut()[0] = odd;
        let names: Vec<String> = (0..ts.len()).map(|i| format!("group/t{i}")).collect();
        let arrays: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(&ts).collect();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &arrays).unwrap();
        let back = load_checkpoint(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), ts.len());
        for ((n, t), (m, u)) in back.iter().zip(names.iter().zip(&ts)) {
            prop_assert_eq!(n, m);
            prop_assert_eq!(t.shape(), u.shape());
            prop_assert!(t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let w = g.param(Arc::new(Tensor::matrix(4, 4, (0..16).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap()));
        let h = g.matmul(x, w).unwrap();
        let h = g.layer_norm(h, 1e-5).unwrap();
        let s = g.softmax_rows(h).unwrap();
        let l = g.sum(s).unwrap();
        let l2 = g.mul(l, l).unwrap();
        let grads = g.backward(l2).unwrap();
        (g.value(h).clone(), grads.get(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::filled(2, 3, 1.0));
    let b = g.constant(Tensor::filled(2, 3, 1.0));
    assert!(g.matmul(a, b).is_err());
    let r = g.constant(Tensor::filled(1, 2, 1.0));
    assert!(g.add_row(a, r).is_err());
}
