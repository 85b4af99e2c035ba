//! Uncertainty-aware submodular region selection for visual attribution.

pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod rng;
pub mod scores;
pub mod submodular;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
