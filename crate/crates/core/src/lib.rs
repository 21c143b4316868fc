//! Gradient-descent laboratory for small convolutional networks on the XOR
//! and XOR-detection problems, plus an MNIST filter-clustering pipeline.

pub mod error;
pub mod gd;
pub mod harness;
pub mod mnist;
pub mod patterns;
pub mod rng;
pub mod scalar;
pub mod xor_lab;
pub mod xord_lab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Double-precision weights, used by the XOR and XORD experiments.
pub type WeightMatrix64 = gd::WeightMatrix<f64>;
pub type WeightMatrix32 = gd::WeightMatrix<f32>;
