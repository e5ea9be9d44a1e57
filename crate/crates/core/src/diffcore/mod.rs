//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Graph`] records one forward pass; [`Graph::backward`] walks it in reverse.
//! Parameters live in a [`ParameterSet`] between steps and are snapshotted into
//! graph leaves with [`Graph::bind`].

mod gemm;
mod graph;
pub mod init;
mod optim;
mod tensor;

pub use graph::{conv_out_len, log_softmax, sigmoid, softmax_slice, BindMode, Bound, Graph, Var};
pub use optim::{clip_grad_norm, MomentBuffer, OptimizerKind, OptimizerState};
pub use tensor::{ParameterSet, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch in dimension {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("input shorter than filter: length {len} < filter {filter}")]
    InputShorterThanFilter { len: usize, filter: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),
    #[error("{0}")]
    InvalidArgument(String),
}
