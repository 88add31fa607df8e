//! Gammatone cochleagram features and a large-kernel CNN for classifying
//! underwater vessel noise, with a seeded synthetic corpus and the metric
//! suite used to evaluate it.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
