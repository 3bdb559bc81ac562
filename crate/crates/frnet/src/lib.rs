//! FFT residual network for gaze regression, built on a small from-scratch
//! tensor and reverse-mode autodiff core.
//!
//! The crate is organised around the pipeline: `tensor` and `fft` provide the
//! numerics, `autodiff` the training machinery, `nn` the layers and the full
//! model, `train`/`data`/`metrics` the desk-scale training harness, `profile`
//! the parameter/FLOP accounting, and `verify` the independent oracle suites.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fft;
pub mod metrics;
pub mod nn;
pub mod profile;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
