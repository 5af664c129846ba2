//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only
//! node list; [`Tape::backward`] sweeps it in reverse and returns a
//! [`Gradients`] table. Values are generic over [`Scalar`] so the same
//! networks run in `f32` for training and in `f64` for finite-difference
//! gradient checks.

mod adam;
mod gradcheck;
pub mod kernels;
pub mod layers;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckOptions};
pub use params::{Bound, ParamSet};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
