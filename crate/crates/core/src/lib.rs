//! Driver perceived-risk engine.
//!
//! The crate turns traffic logs into per-object perceived-risk vectors,
//! builds windowed feature datasets, reconstructs consistent labels from
//! noisy multi-rater panels and runs a self-training loop around a
//! pluggable classifier.

pub mod error;
pub mod geometry;
pub mod params;
pub mod scene;
pub mod dspr;
pub mod ttc;
pub mod dataset;
pub mod synth;
pub mod learn;
pub mod pipeline;

pub use error::{Error, ErrorCategory, Result};
pub use params::DsprParams;
