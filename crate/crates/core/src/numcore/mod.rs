//! Dense `f64` tensors with a reverse-mode tape, the Adam optimizer and the
//! named-array binary format.

mod graph;
pub mod io;
mod optim;
mod tensor;

pub use graph::{Axis, Gradients, Graph, Var};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use tensor::Tensor;
