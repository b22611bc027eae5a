//! Multi-view time-series classification engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense `f64` tensors with a reverse-mode differentiation tape,
//! * [`encoders`] recurrent, convolutional, attention and MLP view encoders,
//! * [`fusion`] Input / Feature / Decision / Hybrid / Ensemble strategies with
//!   gated merging and auxiliary multi-loss,
//! * [`training`] class-weighted cross-entropy, Adam and early stopping,
//! * [`metrics`] confusion-matrix scores, AUC and label-free uncertainty,
//! * [`data`] the `MVDS` dataset container, CSV import, NDVI, monthly
//!   resampling, spectral entropy and synthetic generators,
//! * [`experiments`] the configuration-driven grid / search runner.

pub mod data;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
