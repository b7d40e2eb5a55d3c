//! Learnable axis permutations in front of a convolutional-recurrent
//! forecaster, trained jointly from scratch on `f64` tensors.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major tensors and the numeric kernels.
//! - [`autodiff`]: a define-by-run reverse-mode tape over those tensors.
//! - [`rco`]: the permutation operator, its regularizer and hardening.
//! - [`nn`]: convolution, LSTM and dense layers plus the full forecaster.
//! - [`metrics`]: losses, RMSE and reporting helpers.
//! - [`data`]: CSV ingestion, windowing and the synthetic planted task.
//! - [`trainer`]: the training loop, evaluation, γ sweeps and timing.
//! - [`checkpoint`]: versioned JSON checkpoints.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod par;
pub mod rco;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Padding, Tensor};
