//! Beam prediction for coordinated mmWave transmission with transfer learning
//! and domain adaptation across base-station deployments.

pub mod array_codebook;
pub mod beam_metrics;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
