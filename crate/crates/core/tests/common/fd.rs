//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance run.
//!
//! The numeric side uses the fourth-order central stencil so that its own
//! truncation error (O(h^4)) stays well below the tolerances even where the
//! function is strongly curved.

use std::collections::BTreeMap;
use std::sync::Arc;

use engagekit::model::{trace, FeatureBundle, FeatureKind, ModelConfig, ModelParams, Traced};
use engagekit::numcore::{Axis, Graph, Tensor, Var};
use engagekit::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// |a - n| / max(|a|, |n|, floor): relative, with an absolute floor so that
/// vanishing gradients compare on rounding noise rather than on 0/0.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn central(f: impl FnMut(f64) -> f64) -> f64 {
    stencil(f, H)
}

fn stencil(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Reduces `build`'s output to a scalar through a fixed random weighting and
/// returns the largest relative gradient error over every input entry.
fn check(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let (r, c) = g.value(out).dims2().unwrap();
        random(rng, r, c)
    };
    let scalar = |inputs: &[Tensor], grad: bool| -> (f64, Vec<Option<Tensor>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(Arc::new(t.clone()))).collect();
        let out = build(&mut g, &vars).unwrap();
        let w = g.constant(probe.clone());
        let weighted = g.mul(out, w).unwrap();
        let s = g.sum(weighted).unwrap();
        let value = g.value(s).item();
        if !grad {
            return (value, Vec::new());
        }
        let grads = g.backward(s).unwrap();
        (value, vars.iter().map(|&v| grads.get(v).cloned()).collect())
    };
    let (_, analytic) = scalar(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let numeric = central(|delta| {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[j] += delta;
                scalar(&shifted, false).0
            });
            let a = analytic[k].as_ref().map_or(0.0, |g| g.data()[j]);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

type Inputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;

fn primitive_cases() -> Vec<(&'static str, Box<Build>, Inputs)> {
    fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
    }
    vec![
        (
            "matmul",
            Box::new(|g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, k, n) = dims(rng);
                vec![random(rng, m, k), random(rng, k, n)]
            }),
        ),
        (
            "add",
            Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n), random(rng, m, n)]
            }),
        ),
        (
            "mul",
            Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n), random(rng, m, n)]
            }),
        ),
        (
            "add_row",
            Box::new(|g: &mut Graph, v: &[Var]| g.add_row(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n), random(rng, 1, n)]
            }),
        ),
        (
            "mul_row",
            Box::new(|g: &mut Graph, v: &[Var]| g.mul_row(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n), random(rng, 1, n)]
            }),
        ),
        (
            "scale",
            Box::new(|g: &mut Graph, v: &[Var]| g.scale(v[0], -1.7)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "transpose",
            Box::new(|g: &mut Graph, v: &[Var]| g.transpose(v[0])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "concat_cols",
            Box::new(|g: &mut Graph, v: &[Var]| g.concat_cols(&[v[0], v[1], v[0]])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, a, b) = dims(rng);
                vec![random(rng, m, a), random(rng, m, b)]
            }),
        ),
        (
            "concat_rows",
            Box::new(|g: &mut Graph, v: &[Var]| g.concat_rows(&[v[0], v[1]])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (a, b, n) = dims(rng);
                vec![random(rng, a, n), random(rng, b, n)]
            }),
        ),
        (
            "slice_rows",
            Box::new(|g: &mut Graph, v: &[Var]| g.slice_rows(v[0], 1, 3)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (_, n, _) = dims(rng);
                vec![random(rng, 4, n)]
            }),
        ),
        (
            "slice_cols",
            Box::new(|g: &mut Graph, v: &[Var]| g.slice_cols(v[0], 0, 2)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, _, _) = dims(rng);
                vec![random(rng, m, 3)]
            }),
        ),
        (
            "softmax_rows",
            Box::new(|g: &mut Graph, v: &[Var]| g.softmax_rows(v[0])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n + 1)]
            }),
        ),
        (
            "masked_softmax_rows",
            Box::new(|g: &mut Graph, v: &[Var]| {
                let mask = [true, false, true, true, true, false, false, true, true];
                g.masked_softmax_rows(v[0], Some(&mask))
            }),
            Box::new(|rng: &mut ChaCha8Rng| vec![random(rng, 3, 3)]),
        ),
        (
            // Two-column rows normalise to (-1, 1) whatever the input, leaving a
            // gradient of order eps that finite differences cannot resolve.
            "layer_norm",
            Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], 1e-5)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n + 2)]
            }),
        ),
        (
            "relu",
            Box::new(|g: &mut Graph, v: &[Var]| g.relu(v[0])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "sigmoid",
            Box::new(|g: &mut Graph, v: &[Var]| g.sigmoid(v[0])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "mean_rows",
            Box::new(|g: &mut Graph, v: &[Var]| g.mean(v[0], Axis::Rows)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "mean_cols",
            Box::new(|g: &mut Graph, v: &[Var]| g.mean(v[0], Axis::Cols)),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "sum",
            Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n)]
            }),
        ),
        (
            "squared_error",
            Box::new(|g: &mut Graph, v: &[Var]| g.squared_error(v[0], v[1])),
            Box::new(|rng: &mut ChaCha8Rng| {
                let (m, n, _) = dims(rng);
                vec![random(rng, m, n), random(rng, m, n)]
            }),
        ),
        (
            // a five-parameter composite: sigmoid(x W + b) scaled by a learned gate
            "composite",
            Box::new(|g: &mut Graph, v: &[Var]| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add_row(h, v[2])?;
                let h = g.layer_norm(h, 1e-5)?;
                let h = g.mul_row(h, v[3])?;
                let h = g.sigmoid(h)?;
                let s = g.softmax_rows(h)?;
                g.mul(s, v[4])
            }),
            Box::new(|rng: &mut ChaCha8Rng| {
                vec![random(rng, 3, 4), random(rng, 4, 5), random(rng, 1, 5), random(rng, 1, 5), random(rng, 3, 5)]
            }),
        ),
    ]
}

fn tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        d_model: 4,
        feature_dims: FeatureKind::ALL.into_iter().map(|k| (k, 3)).collect(),
        max_clips: 8,
        duration_as_input: rng.random_bool(0.5),
        ecr_causal_mask: rng.random_bool(0.5),
        ..ModelConfig::default()
    }
}

fn bundle(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> FeatureBundle {
    let n = rng.random_range(1..=cfg.max_clips);
    let features: BTreeMap<_, _> = FeatureKind::ALL
        .into_iter()
        .map(|k| (k, random(rng, if k.is_visual() { n } else { 2 }, cfg.dim(k))))
        .collect();
    FeatureBundle::new("g", rng.random_range(4.0..40.0), features).unwrap()
}

fn model_loss(b: &FeatureBundle, p: &ModelParams, cfg: &ModelConfig, labels: (f64, f64)) -> (f64, Traced, Var) {
    let mut tr = trace(b, p, cfg, Some(27.0)).unwrap();
    let g = &mut tr.graph;
    let y1 = g.constant(Tensor::scalar(labels.0));
    let y2 = g.constant(Tensor::scalar(labels.1));
    let l1 = g.squared_error(tr.nawp_hat, y1).unwrap();
    let l2 = g.squared_error(tr.ecr_hat, y2).unwrap();
    let loss = g.add(l1, l2).unwrap();
    (g.value(loss).item(), tr, loss)
}

/// Largest relative error per primitive over `instances` random shapes.
pub fn primitive_errors(instances: u64) -> Vec<(&'static str, f64)> {
    primitive_cases()
        .into_iter()
        .map(|(name, build, inputs)| {
            let mut worst: f64 = 0.0;
            for seed in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = inputs(&mut rng);
                worst = worst.max(check(build.as_ref(), &x, &mut rng));
            }
            (name, worst)
        })
        .collect()
}

pub struct ModelCheck {
    pub worst: f64,
    /// Coordinates compared.
    pub probed: usize,
    /// Coordinates skipped because a ReLU kink fell inside the stencil.
    pub kinks: usize,
}

/// Full model, default depth (8 fusion + 8 temporal layers) at tiny width.
/// Every parameter tensor is probed at up to three random entries.
pub fn model_check(instances: u64) -> ModelCheck {
    let mut worst: f64 = 0.0;
    let (mut probed, mut kinks) = (0usize, 0usize);
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cfg = tiny_config(&mut rng);
        // Zero-initialised biases put ReLU inputs exactly on the kink when a
        // whole upstream column is dead; jitter every entry to stay off it.
        let mut params = ModelParams::init(&cfg, seed).unwrap();
        for t in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.1..0.1));
        }
        let b = bundle(&mut rng, &cfg);
        let labels = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (_, tr, loss) = model_loss(&b, &params, &cfg, labels);
        let grads = tr.graph.backward(loss).unwrap();
        let analytic: Vec<Option<Tensor>> = tr.param_vars.iter().map(|&v| grads.get(v).cloned()).collect();
        drop(tr);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for (i, name) in names.iter().enumerate() {
            let numel = params.get(name).unwrap().numel();
            for _ in 0..numel.min(3) {
                let j = rng.random_range(0..numel);
                let f = |delta: f64| {
                    let mut shifted = params.clone();
                    shifted.tensor_mut(name).unwrap().data_mut()[j] += delta;
                    model_loss(&b, &shifted, &cfg, labels).0
                };
                let numeric = central(f);
                // A ReLU input crossing zero inside the stencil makes the
                // difference quotient meaningless there; halving the step
                // exposes it, and such coordinates are counted, not compared.
                let half = stencil(f, H / 2.0);
                if (numeric - half).abs() > 1e-7 * numeric.abs().max(1e-3) {
                    kinks += 1;
                    continue;
                }
                probed += 1;
                let a = analytic[i].as_ref().map_or(0.0, |g| g.data()[j]);
                let e = rel_err(a, numeric);
                worst = worst.max(e);
            }
        }
    }
    ModelCheck { worst, probed, kinks }
}
