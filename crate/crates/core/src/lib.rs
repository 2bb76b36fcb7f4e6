//! Core library for evidential classification under an information
//! bottleneck: reverse-mode autodiff on small dense tensors, Dirichlet
//! evidence arithmetic, the evidential and variational loss families,
//! a dual-head MLP with its trainer, calibration and OOD metrics, and
//! deterministic synthetic data.
//!
//! Every stochastic component takes an explicit seed or generator and is
//! bit-reproducible across runs.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evidential;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod special;
pub mod tensor;
pub mod trainer;

pub use error::{EvibError, Result};
pub use tensor::Tensor;
