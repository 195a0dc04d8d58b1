//! Dense `f64` tensors with reverse-mode differentiation over exactly the
//! operation set the encoder and objectives need.

mod dense;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use layers::{gru_cell, rnn_cell, triplet_margin, GruCell, Linear, Mlp, RnnCell};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("{op}: non-finite output ({trace})")]
    NonFinite { op: &'static str, trace: String },
    #[error("{op}: empty group")]
    EmptyGroup { op: &'static str },
    #[error("{op}: index {index} out of bounds for {len} rows")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
