//! Desk-scale engine for two-stage lung-CT analysis: Haar-wavelet image
//! enhancement, a residual CNN classifier, a dual-pooling encoder-decoder
//! segmenter, reverse-mode autodiff, training/evaluation harnesses, and a
//! synthetic phantom dataset so everything runs without clinical data.

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nets;
pub mod ops;
pub mod seeds;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{Scalar, Tensor};
