//! Uncertainty-disentangled binary classification of 2D infant pose sequences.
//!
//! The pipeline runs preprocessing, optional augmentation, a graph-temporal
//! motion encoder, the disentanglement heads (MC-dropout epistemic, learned
//! aleatoric, learned total uncertainty), the fusion heads, and the
//! loss-attenuation objective. Metrics and a synthetic data generator complete
//! the toolkit.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod preprocess;
pub mod rng;
pub mod skeleton;
pub mod synthgen;
pub mod trainer;
pub mod udm;
pub mod ufm;

pub use error::{Error, Result};
