//! Predictive dynamic fusion for decision-level multimodal classification.
//!
//! Each modality has its own encoder, classifier head and confidence
//! predictor. The predicted true-class probability of every modality is turned
//! into a fusion weight through mono-confidence, holo-confidence and their sum
//! (co-belief), which is then calibrated by the relative distribution
//! uniformity of the modalities' outputs. See [`fusion`] for the formulas.
//!
//! Crate layout:
//!
//! - [`netcore`]: matrices, MLPs with manual backprop, Adam, gradient checking
//! - [`fusion`]: the pure weight math
//! - [`model`]: the end-to-end classifier, its composite loss and training step
//! - [`datagen`]: synthetic multimodal data and test-time corruption
//! - [`metrics`]: covariances, aggregate covariance, GDP, accuracy summaries
//! - [`experiment`]: config-driven training, sweeps and reports

pub mod datagen;
mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod netcore;
pub(crate) mod seeding;

pub use error::{Error, Result};
