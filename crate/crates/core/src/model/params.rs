use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform on `±sqrt(3 * gain / fan_in)`; `gain` is 2 in front of a ReLU.
    Uniform { gain: f64 },
    Zeros,
    Ones,
    /// Position table: small uniform values.
    Small,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn linear(out: &mut Vec<Spec>, prefix: &str, suffix: &str, fan_in: usize, fan_out: usize, relu: bool) {
    let gain = if relu { 2.0 } else { 1.0 };
    out.push(Spec { name: format!("{prefix}.w{suffix}"), shape: vec![fan_in, fan_out], init: Init::Uniform { gain } });
    out.push(Spec { name: format!("{prefix}.b{suffix}"), shape: vec![1, fan_out], init: Init::Zeros });
}

fn layer_norm(out: &mut Vec<Spec>, prefix: &str, d: usize) {
    out.push(Spec { name: format!("{prefix}.g"), shape: vec![1, d], init: Init::Ones });
    out.push(Spec { name: format!("{prefix}.b"), shape: vec![1, d], init: Init::Zeros });
}

fn attention(out: &mut Vec<Spec>, prefix: &str, d_query: usize, d_kv: usize, d: usize) {
    linear(out, prefix, "q", d_query, d, false);
    linear(out, prefix, "k", d_kv, d, false);
    linear(out, prefix, "v", d_kv, d, false);
    linear(out, prefix, "o", d, d, false);
}

fn specs(config: &ModelConfig) -> Vec<Spec> {
    let d = config.d_model;
    let mut s = Vec::new();
    for kind in config.visual_kinds() {
        let p = format!("proj.{kind}");
        linear(&mut s, &p, "1", config.dim(kind), d, true);
        linear(&mut s, &p, "2", d, d, false);
    }
    if config.has_text() {
        attention(&mut s, "xattn", d, config.dim(super::FeatureKind::Text), d);
    }
    let mut width = config.fusion_input_dim();
    for i in 0..config.fusion_layers {
        let last = i + 1 == config.fusion_layers;
        linear(&mut s, &format!("fusion.{i}"), "", width, d, !last);
        width = d;
    }
    s.push(Spec { name: "pos".into(), shape: vec![config.max_clips, d], init: Init::Small });
    for i in 0..config.temporal_layers {
        let p = format!("temporal.{i}");
        layer_norm(&mut s, &format!("{p}.ln1"), d);
        attention(&mut s, &format!("{p}.attn"), d, d, d);
        layer_norm(&mut s, &format!("{p}.ln2"), d);
        linear(&mut s, &format!("{p}.ffn"), "1", d, config.ffn_dim(), true);
        linear(&mut s, &format!("{p}.ffn"), "2", config.ffn_dim(), d, false);
    }
    layer_norm(&mut s, "final_ln", d);
    for head in ["head_nawp", "head_ecr"] {
        linear(&mut s, head, "1", d, d, true);
        linear(&mut s, head, "2", d, 1, false);
    }
    s
}

/// Names and shapes of every parameter the configuration needs, in
/// canonical order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    specs(config).into_iter().map(|s| (s.name, s.shape)).collect()
}

/// Named model weights. Tensors are shared with forward graphs through
/// `Arc`, so tracing a forward pass never copies weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Arc<Tensor>)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Seeded initialisation: weights uniform and scaled by fan-in, biases
    /// zero, layer-norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs(config).into_iter().map(|spec| {
            let numel: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::Uniform { gain } => {
                    let bound = (3.0 * gain / spec.shape[0] as f64).sqrt();
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Small => (0..numel).map(|_| rng.random_range(-0.1..0.1)).collect(),
            };
            (spec.name, Tensor::new(spec.shape, data).expect("generated shape is valid"))
        });
        Self::from_named(tensors.collect())
    }

    pub fn from_named(named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(named.len());
        for (i, (name, _)) in named.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate parameter `{name}`")));
            }
        }
        let entries = named.into_iter().map(|(n, t)| (n, Arc::new(t))).collect();
        Ok(ModelParams { entries, index })
    }

    /// Errors unless names, order and shapes are exactly what `config` needs.
    pub fn check_config(&self, config: &ModelConfig) -> Result<()> {
        let expected = param_shapes(config);
        if expected.len() != self.entries.len() {
            return Err(Error::shape(
                "params",
                format!("{} tensors, config needs {}", self.entries.len(), expected.len()),
            ));
        }
        for ((name, shape), (have, t)) in expected.iter().zip(&self.entries) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::shape(
                    "params",
                    format!("expected `{name}` {shape:?}, found `{have}` {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &*self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn shared(&self, i: usize) -> Arc<Tensor> {
        Arc::clone(&self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), &**t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Mutable access in canonical order. Clones a tensor only if a forward
    /// graph still holds it.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| Arc::make_mut(t)).collect()
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(Arc::make_mut(&mut self.entries[i].1))
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Total number of scalar weights.
pub fn count_parameters<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> usize {
    tensors.into_iter().map(Tensor::numel).sum()
}
