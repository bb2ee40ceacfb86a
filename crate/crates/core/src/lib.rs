//! Core library for hierarchical conditional VAE anomaly detection on
//! machine operating sounds: log-mel feature extraction, taxonomy
//! conditioning, ELBO training, reconstruction-error scoring, AUC
//! evaluation, and a synthetic dataset generator.

pub mod adam;
pub mod audio;
pub mod checkpoint;
pub mod conditioning;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
