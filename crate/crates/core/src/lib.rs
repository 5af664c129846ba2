//! Edge-enhanced single image super-resolution.
//!
//! The pipeline runs three separately trained networks in sequence:
//!
//! 1. [`sr_net`]: a residual super-resolution network whose upsampler injects
//!    pyramid-pooled global context before the pixel-shuffle stages.
//! 2. [`edge_net`]: a dense-residual edge detector with side outputs, short
//!    connections, a classifier and a regressor branch, and a
//!    multi-width ensemble.
//! 3. [`merge_net`]: a residual trunk fed with RGB + edge channels and an
//!    extra edge skip connection, producing the final image.
//!
//! Everything runs on the small reverse-mode autodiff engine in
//! [`autodiff`]; classical kernels (bicubic resampling, PSNR/SSIM, Canny)
//! live in [`imageproc`].

pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod edge_net;
pub mod error;
pub mod gradsuite;
pub mod imageproc;
pub mod merge_net;
pub mod pipeline;
pub mod sr_net;
pub mod training;

pub use autodiff::{AdamState, Gradients, ParamSet, Scalar, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use imageproc::{EdgeMap, ImageBuffer, Plane};
pub use config::{EdgeNetConfig, FlatConfig, LossKind, MergeConfig, Module, SrConfig, TrainConfig};
pub use edge_net::{Branch, EdgeEnsemble, EdgeNet};
pub use merge_net::MergeNet;
pub use pipeline::{Pipeline, PipelineOutput, PipelinePaths};
pub use sr_net::SrNet;
pub use training::{Checkpoint, Model, TrainData};
