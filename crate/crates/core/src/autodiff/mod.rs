//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Operations cover exactly what the model zoo needs: bias-free temporal
//! convolution, temporal average pooling, bias-free affine maps, ReLU, linear
//! combinations (for Runge–Kutta stages), batch/fixed channel normalization
//! and softmax cross-entropy. Tensors are `(length, channels)` or
//! `(batch, length, channels)`.

pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{ChannelStats, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("graph error: {0}")]
    Graph(String),
}
