//! Deterministic RAW-domain image processing substrate.
//!
//! The crate covers the data side of RAW-domain restoration training:
//!
//! - [`ptp`] — the invertible, differentiable tone chain (white balance,
//!   color correction, gamma, tone mapping) with forward-mode derivatives;
//! - [`cfa`] — multi-Bayer mosaicking and classical demosaicing;
//! - [`noise`] — heteroscedastic shot/read sensor noise;
//! - [`degrade`] — blur/resize/JPEG detail degradation (no noise stage);
//! - [`synth`] — end-to-end LQ-RAW / HQ-linear pair synthesis with
//!   manifests, plus the feed-forward preview ISP;
//! - [`metrics`] — PSNR/SSIM, latent scaling statistics, and the
//!   dual-domain MSE loss with analytic gradients;
//! - [`image`] — planar f32 value types and lossless file IO.
//!
//! Everything is a pure function of its inputs and an explicit seed; outputs
//! are bit-identical across runs and thread counts.

pub mod cfa;
pub mod degrade;
pub mod error;
pub mod image;
pub mod metrics;
pub mod noise;
pub mod ptp;
pub mod rng;
pub mod selftest;
pub mod synth;
pub mod synthetic;

pub use error::{Error, Result};
