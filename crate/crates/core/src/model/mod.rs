//! Multi-modal clip-fusion regressor.
//!
//! Per clip, each enabled visual feature is projected to `d_model` by a small
//! MLP; the projected action feature queries the text tokens through a
//! single-head cross-attention. The projections and the cross-attention
//! output are concatenated and fused by a deep MLP into `O_i`. Learned
//! position embeddings are added and a stack of pre-norm self-attention
//! blocks produces `H_i`. Two sigmoid heads score every clip: the NAWP
//! estimate averages head one over all clips, the ECR estimate averages head
//! two over the clips covering the opening `ecr_window_s` seconds.

mod bundle;
mod forward;
mod params;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{
    n_clips_for, read_manifest, write_manifest, FeatureBundle, ManifestRow, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use forward::{forward, n_ecr_clips, trace, Prediction, Traced};
pub use params::{count_parameters, param_shapes, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Semantic,
    Distortion,
    Action,
    Aesthetic,
    Caption,
    Text,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Semantic,
        FeatureKind::Distortion,
        FeatureKind::Action,
        FeatureKind::Aesthetic,
        FeatureKind::Caption,
        FeatureKind::Text,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Semantic => "semantic",
            FeatureKind::Distortion => "distortion",
            FeatureKind::Action => "action",
            FeatureKind::Aesthetic => "aesthetic",
            FeatureKind::Caption => "caption",
            FeatureKind::Text => "text",
        }
    }

    /// Per-clip features; `Text` is shared by all clips of a video.
    pub fn is_visual(self) -> bool {
        self != FeatureKind::Text
    }

    /// Parses a comma-separated list such as `semantic,action,text`.
    pub fn parse_list(list: &str) -> Result<BTreeSet<FeatureKind>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub feature_dims: BTreeMap<FeatureKind, usize>,
    /// Frames per clip.
    pub clip_len: usize,
    pub enabled: BTreeSet<FeatureKind>,
    pub ecr_window_s: f64,
    /// Append `duration / 60` to every clip's fusion input.
    pub duration_as_input: bool,
    /// Stop the opening clips from attending to later clips in the temporal
    /// stack, so the ECR estimate only sees the opening window.
    pub ecr_causal_mask: bool,
    /// Size of the position-embedding table.
    pub max_clips: usize,
    pub fusion_layers: usize,
    pub temporal_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            feature_dims: FeatureKind::ALL.into_iter().map(|k| (k, 64)).collect(),
            clip_len: 16,
            enabled: FeatureKind::ALL.into_iter().collect(),
            ecr_window_s: 5.0,
            duration_as_input: false,
            ecr_causal_mask: false,
            // 60 s at 60 fps in 16-frame clips
            max_clips: 225,
            fusion_layers: 8,
            temporal_layers: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.clip_len == 0 || self.max_clips == 0 {
            return Err(Error::invalid("d_model, clip_len and max_clips must be positive"));
        }
        if self.fusion_layers == 0 || self.temporal_layers == 0 {
            return Err(Error::invalid("layer counts must be positive"));
        }
        if !(self.ecr_window_s.is_finite() && self.ecr_window_s > 0.0) {
            return Err(Error::invalid("ecr_window_s must be positive"));
        }
        if !self.enabled.iter().any(|k| k.is_visual()) {
            return Err(Error::invalid("at least one visual feature kind must be enabled"));
        }
        if self.has_text() != self.enabled.contains(&FeatureKind::Text) {
            return Err(Error::invalid("text features enter through the action query; enable action too"));
        }
        for kind in &self.enabled {
            match self.feature_dims.get(kind) {
                Some(&d) if d > 0 => {}
                _ => return Err(Error::invalid(format!("no dimension configured for `{kind}`"))),
            }
        }
        Ok(())
    }

    pub fn dim(&self, kind: FeatureKind) -> usize {
        self.feature_dims.get(&kind).copied().unwrap_or(0)
    }

    /// Enabled visual kinds in fusion-input order.
    pub fn visual_kinds(&self) -> impl Iterator<Item = FeatureKind> + '_ {
        self.enabled.iter().copied().filter(|k| k.is_visual())
    }

    /// Whether the cross-attention branch is present.
    pub fn has_text(&self) -> bool {
        self.enabled.contains(&FeatureKind::Text) && self.enabled.contains(&FeatureKind::Action)
    }

    /// Width of the fusion MLP input.
    pub fn fusion_input_dim(&self) -> usize {
        let branches = self.visual_kinds().count() + usize::from(self.has_text());
        branches * self.d_model + usize::from(self.duration_as_input)
    }

    pub fn ffn_dim(&self) -> usize {
        2 * self.d_model
    }
}
