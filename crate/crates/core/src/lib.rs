//! Test bench for studying how gradient estimators across a scalar quantizer
//! shape the training of a small neural codec.
//!
//! The pieces, bottom up:
//!
//! - [`numerics`]: dense matrices, seeded Gaussian sampling, Householder QR.
//! - [`autodiff`]: a tape-based reverse-mode graph with stop-gradient.
//! - [`datagen`]: quantized Gaussian targets rotated into network inputs.
//! - [`quantizer`]: the scalar quantizer and its training-time bridges.
//! - [`codec`]: the skip-connected encoder/decoder.
//! - [`trainer`]: Adam training loop and metrics.
//! - [`experiments`]: presets, config files, CSV/JSON/SVG output.

pub mod autodiff;
pub mod codec;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod quantizer;
pub mod trainer;

pub use error::{Error, Result};
