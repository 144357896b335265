//! Self-supervised pre-training for irregularly sampled multivariate time
//! series: a reference-point attention autoencoder trained on observed cells
//! plus mixup pseudo-observations drawn from running reconstruction-error
//! statistics, with Gaussian error alignment, contrastive and dual
//! reconstruction losses, and classification / interpolation / forecasting
//! harnesses.
//!
//! Everything is generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the CLI and the test suites use.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod pseudo_obs;
pub mod scalar;
pub mod series;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type IrregularSeries = series::IrregularSeries<f64>;
pub type Dataset = series::Dataset<f64>;
pub type Model = encoder::Model<f64>;
pub type ModelParams = encoder::ModelParams<f64>;
pub type ErrorStats = pseudo_obs::ErrorStats<f64>;
pub type ModelState = trainer::ModelState<f64>;
pub type Checkpoint = trainer::Checkpoint<f64>;
