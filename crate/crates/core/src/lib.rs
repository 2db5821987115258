//! Desk-scale hyperspectral pansharpening with a textural-spectral fusion
//! transformer: a minimal reverse-mode autodiff tensor engine, the model,
//! its losses, Wald's-protocol data preparation, quality metrics, and a
//! deterministic training loop.

pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, TensorError};
