use serde::Serialize;

use super::{FeatureBundle, FeatureKind, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::{Axis, Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Clips averaged by the ECR head: `max(1, floor(window * r / L))`, capped
/// at the clip count.
pub fn n_ecr_clips(ecr_window_s: f64, frame_rate: f64, clip_len: usize, n_clips: usize) -> usize {
    let n = (ecr_window_s * frame_rate / clip_len as f64 + 1e-9).floor() as usize;
    n.max(1).min(n_clips)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub nawp_hat: f64,
    pub ecr_hat: f64,
    /// `(f1_i, f2_i)` head outputs for every clip.
    pub per_clip: Vec<(f64, f64)>,
    pub n_ecr: usize,
}

/// A recorded forward pass, kept for backpropagation.
#[derive(Debug)]
pub struct Traced {
    pub graph: Graph,
    /// Graph leaf for each parameter, in the params' canonical order.
    pub param_vars: Vec<Var>,
    pub nawp_hat: Var,
    pub ecr_hat: Var,
    /// `n_clips x 1` outputs of the two heads.
    pub per_clip_nawp: Var,
    pub per_clip_ecr: Var,
    pub n_ecr: usize,
}

impl Traced {
    pub fn prediction(&self) -> Prediction {
        let f1 = self.graph.value(self.per_clip_nawp).data();
        let f2 = self.graph.value(self.per_clip_ecr).data();
        Prediction {
            nawp_hat: self.graph.value(self.nawp_hat).item(),
            ecr_hat: self.graph.value(self.ecr_hat).item(),
            per_clip: f1.iter().copied().zip(f2.iter().copied()).collect(),
            n_ecr: self.n_ecr,
        }
    }
}

struct Builder<'a> {
    g: Graph,
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl Builder<'_> {
    fn p(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    fn linear(&mut self, x: Var, prefix: &str, suffix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w{suffix}"))?;
        let b = self.p(&format!("{prefix}.b{suffix}"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    fn mlp2(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, prefix, "1")?;
        let h = self.g.relu(h)?;
        self.linear(h, prefix, "2")
    }

    fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(&format!("{prefix}.g"))?;
        let bias = self.p(&format!("{prefix}.b"))?;
        let y = self.g.layer_norm(x, LN_EPS)?;
        let y = self.g.mul_row(y, gain)?;
        self.g.add_row(y, bias)
    }

    /// Single-head scaled dot-product attention of `query` rows over `kv` rows.
    fn attention(&mut self, query: Var, kv: Var, prefix: &str, mask: Option<&[bool]>) -> Result<Var> {
        let q = self.linear(query, prefix, "q")?;
        let k = self.linear(kv, prefix, "k")?;
        let v = self.linear(kv, prefix, "v")?;
        let d = self.g.value(q).cols() as f64;
        let kt = self.g.transpose(k)?;
        let scores = self.g.matmul(q, kt)?;
        let scores = self.g.scale(scores, 1.0 / d.sqrt())?;
        let weights = self.g.masked_softmax_rows(scores, mask)?;
        let mixed = self.g.matmul(weights, v)?;
        self.linear(mixed, prefix, "o")
    }
}

/// Records the forward pass of one video on a fresh graph.
///
/// `duration_s` is required only when the configuration feeds duration to
/// the fusion MLP.
pub fn trace(
    bundle: &FeatureBundle,
    params: &ModelParams,
    config: &ModelConfig,
    duration_s: Option<f64>,
) -> Result<Traced> {
    bundle.check_config(config)?;
    let n = bundle.n_clips;
    if n == 0 {
        return Err(Error::invalid(format!("{}: no clips", bundle.video_id)));
    }
    if n > config.max_clips {
        return Err(Error::invalid(format!(
            "{}: {n} clips exceed max_clips {}",
            bundle.video_id, config.max_clips
        )));
    }
    let mut g = Graph::new();
    let vars = (0..params.len()).map(|i| g.param(params.shared(i))).collect();
    let mut b = Builder { g, params, vars };

    let mut branches = Vec::new();
    let mut action = None;
    for kind in config.visual_kinds() {
        let x = b.g.constant(bundle.features[&kind].clone());
        let projected = b.mlp2(x, &format!("proj.{kind}"))?;
        if kind == FeatureKind::Action {
            action = Some(projected);
        }
        branches.push(projected);
    }
    if config.has_text() {
        let text = b.g.constant(bundle.features[&FeatureKind::Text].clone());
        let query = action.expect("has_text implies action is enabled");
        branches.push(b.attention(query, text, "xattn", None)?);
    }
    if config.duration_as_input {
        let d = duration_s.ok_or_else(|| {
            Error::invalid(format!("{}: duration required as model input", bundle.video_id))
        })?;
        branches.push(b.g.constant(Tensor::filled(n, 1, d / 60.0)));
    }

    let mut h = b.g.concat_cols(&branches)?;
    for i in 0..config.fusion_layers {
        h = b.linear(h, &format!("fusion.{i}"), "")?;
        if i + 1 < config.fusion_layers {
            h = b.g.relu(h)?;
        }
    }

    let pos = b.p("pos")?;
    let pos = b.g.slice_rows(pos, 0, n)?;
    h = b.g.add(h, pos)?;

    let n_ecr = n_ecr_clips(config.ecr_window_s, bundle.frame_rate, config.clip_len, n);
    let mask: Option<Vec<bool>> = (config.ecr_causal_mask && n_ecr < n).then(|| {
        (0..n * n).map(|ij| !(ij / n < n_ecr && ij % n >= n_ecr)).collect()
    });
    for i in 0..config.temporal_layers {
        let p = format!("temporal.{i}");
        let x = b.layer_norm(h, &format!("{p}.ln1"))?;
        let a = b.attention(x, x, &format!("{p}.attn"), mask.as_deref())?;
        h = b.g.add(h, a)?;
        let x = b.layer_norm(h, &format!("{p}.ln2"))?;
        let f = b.mlp2(x, &format!("{p}.ffn"))?;
        h = b.g.add(h, f)?;
    }
    let h = b.layer_norm(h, "final_ln")?;

    let logits = b.mlp2(h, "head_nawp")?;
    let per_clip_nawp = b.g.sigmoid(logits)?;
    let logits = b.mlp2(h, "head_ecr")?;
    let per_clip_ecr = b.g.sigmoid(logits)?;
    let nawp_hat = b.g.mean(per_clip_nawp, Axis::Rows)?;
    let opening = b.g.slice_rows(per_clip_ecr, 0, n_ecr)?;
    let ecr_hat = b.g.mean(opening, Axis::Rows)?;

    Ok(Traced {
        graph: b.g,
        param_vars: b.vars,
        nawp_hat,
        ecr_hat,
        per_clip_nawp,
        per_clip_ecr,
        n_ecr,
    })
}

pub fn forward(
    bundle: &FeatureBundle,
    params: &ModelParams,
    config: &ModelConfig,
    duration_s: Option<f64>,
) -> Result<Prediction> {
    Ok(trace(bundle, params, config, duration_s)?.prediction())
}
