//! CPU-only single-image super-resolution with a conditional patch GAN.
//!
//! The crate is self-contained: convolution, transposed convolution, instance
//! normalization, activations and their gradients are written here rather
//! than pulled from a framework, so every backward pass can be checked
//! against finite differences. On top of the operator layer sit a U-Net
//! generator, a conditional patch discriminator with per-layer feature taps,
//! the adversarial/content/perceptual loss system, an ADAM trainer, a bicubic
//! data pipeline, PSNR/SSIM evaluation, and a small CLI.
//!
//! Numeric kernels are generic over [`Scalar`] so the identical code path
//! runs at `f32` in production and `f64` under the finite-difference harness.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{RngStream, Tensor};

/// Production element type aliases.
pub type Tensor32 = Tensor<f32>;
/// Verification element type aliases (finite-difference harness).
pub type Tensor64 = Tensor<f64>;
