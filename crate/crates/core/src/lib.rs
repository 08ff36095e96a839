//! Fully convolutional auxiliary-classifier conditional VAE for non-parallel
//! voice conversion: tensors with reverse-mode autodiff, the networks, the
//! training objective, the signal path and corpus handling.

mod binio;
pub mod data;
pub mod dsp;
pub mod error;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
