//! Robust-average spatio-temporal denoiser: warping, robust-average blocks,
//! kernel prediction, model assembly, losses, metrics, synthetic data and
//! training.

pub mod dataset;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ra;
pub mod synth;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
