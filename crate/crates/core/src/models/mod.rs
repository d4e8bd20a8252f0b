//! The four neural-ODE keyword-spotting variants, their dynamics functions
//! and their parameter/multiply accounting.
//!
//! TCNN variants: stem convolution (m=3) → normalization → ReLU → average
//! pool (4) → ODE block → global average pool → FC. TDNN variants: strided
//! subsampling TDNN (w=3, s=3) → normalization → ReLU → ODE block → global
//! average pool → FC. Nothing carries a bias.

mod network;
mod spec;

pub use network::{argmax, batch_tensor, ForwardOutput, Model, Network, Prediction, Solver, STEM_NORM};
pub use spec::{
    CostReport, CostRow, Family, LayerKind, LayerSpec, ModelSpec, Variant, INPUT_COEFFS, INPUT_FRAMES,
    N_CLASSES,
};

use crate::autodiff::AutodiffError;
use crate::lbn::LbnError;
use crate::ode::OdeError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("unknown model variant {0:?}")]
    UnknownVariant(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Lbn(#[from] LbnError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Builds `spec` with seeded parameters and an empty statistics database.
pub fn build_model(spec: ModelSpec, seed: u64) -> Model<f32> {
    Model::build(spec, seed)
}
