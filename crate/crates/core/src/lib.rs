//! Perceptual spectrogram distances (MSE, 1 - MS-SSIM, NLPD) with analytic
//! gradients, and the genre-classification pipeline built on them: pairwise
//! distance matrices with KNN, and noise-trained autoencoder features with
//! logistic regression.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod autoencoder;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod knn;
pub mod metrics;
pub mod pairwise;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use metrics::{distance, metric_gradient, MetricKind, MetricsConfig};
pub use scalar::{Matrix, Scalar};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Pyramid64 = metrics::Pyramid<f64>;
pub type Pyramid32 = metrics::Pyramid<f32>;
pub type Spectrogram64 = dataset::Spectrogram<f64>;
pub type Spectrogram32 = dataset::Spectrogram<f32>;
pub type LogRegModel64 = classifier::LogRegModel<f64>;
pub type LogRegModel32 = classifier::LogRegModel<f32>;
