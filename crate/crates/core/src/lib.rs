//! Attribution-driven feature selection for neural-network regression.
//!
//! The crate trains a small MLP on tabular data, computes Integrated
//! Gradients attributions, clusters per-feature importance with k-means
//! and iteratively discards the least-important cluster. Pearson, Lasso
//! and KernelSHAP selectors are provided for comparison, together with a
//! Gaussian-process surrogate tuner for the network hyperparameters.
//!
//! Numeric kernels are generic over the scalar type through [`scalar::Real`];
//! the pipeline and the CLI use the `f64` aliases exported below.

pub mod attribution;
pub mod config;
pub mod data;
pub mod error;
mod linalg;
pub mod nn;
pub mod pipeline;
pub mod quadrature;
pub mod report;
pub mod scalar;
pub mod seeding;
pub mod selection;
pub mod tuning;

pub use error::{Error, Result};

/// Concrete `f64` aliases used by the pipeline and the CLI.
pub type Dataset = data::Dataset<f64>;
pub type GroundTruth = data::GroundTruth<f64>;
pub type StandardScaler = data::StandardScaler<f64>;
pub type TrainedModel = nn::TrainedModel<f64>;
pub type AttributionMatrix = attribution::AttributionMatrix<f64>;
pub type GlobalImportance = attribution::GlobalImportance<f64>;
