//! Radiograph super-resolution toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`]: planar `[0, 1]` rasters, PNG/PGM I/O and BT.601 luma.
//! * [`degrade`]: the composite degradation model (blur/noise stack,
//!   antialiased bicubic downsampling, DCT quantization) that turns an HR
//!   image `x` into a noisy LR image `y` and a clean LR image `y'`.
//! * [`metrics`]: PSNR and SSIM on the luma channel.
//! * [`autodiff`]: a small reverse-mode tensor engine with Adam and a
//!   finite-difference gradient checker.
//! * [`models`]: the attention denoising head, the SR backbone and a compact
//!   discriminator.
//! * [`training`]: separate-then-joint training and model evaluation.
//! * [`dataset`]: dataset synthesis, manifests and replay verification.

pub mod autodiff;
pub mod dataset;
pub mod degrade;
mod error;
pub mod image;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
