//! Short-video engagement analytics and prediction.
//!
//! The crate covers the whole pipeline: aggregating raw watch events into
//! per-video statistics ([`aggregate`]), fitting the duration envelope that
//! turns average watch time into a duration-independent score ([`normfit`]),
//! a small reverse-mode tensor core ([`numcore`]), the multi-modal clip-fusion
//! regressor ([`model`]) and its training loop ([`trainer`]), evaluation
//! metrics ([`evalkit`]) and a synthetic corpus generator with planted ground
//! truth ([`synthgen`]).

pub mod aggregate;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod normfit;
pub mod numcore;
pub mod synthgen;
pub mod trainer;

pub use aggregate::{VideoMeta, VideoRecord, WatchEvent};
pub use error::{Error, ErrorClass, Result};
pub use evalkit::EvalReport;
pub use model::{FeatureBundle, FeatureKind, ModelConfig, ModelParams};
pub use normfit::EnvelopeModel;
pub use numcore::Tensor;
pub use trainer::{Checkpoint, TrainConfig};
