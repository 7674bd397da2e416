//! Dense tensors and the differentiable primitives every model equation is
//! built from, plus the optimizer and gradient verification harness.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::gradient_check;
pub use graph::{Graph, Var};
pub use lstm::{LstmLayer, LstmLayerVars};
pub use optim::{clip_global_norm, init_uniform, init_uniform_seeded, sgd_step, ParamSet, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
}
