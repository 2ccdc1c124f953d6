//! DACR: distribution-augmented contrastive reconstruction for time-series
//! anomaly detection.

pub mod augmentor;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heap;
pub mod nn;
pub mod reconstructor;
pub mod scorer;
pub mod seed;
pub mod tensor;

pub use error::{DacrError, Result};
