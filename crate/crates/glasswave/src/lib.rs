//! Directional microphone-array toolkit built around a wearable front-end:
//! fixed and constrained minimum-variance beamformer banks, image-source
//! room simulation, conversational scene synthesis, oracle-mask source
//! separation with gradient-refined beamformer weights, and SI-SDR
//! evaluation.
//!
//! Every capability is a library call first; the `glasswave` binary is a
//! thin wrapper and each `examples/*.rs` file drives one capability
//! end to end.

pub mod beamforming;
pub mod cli;
pub mod error;
pub mod geometry;
mod linalg;
pub mod metrics;
pub mod room;
pub mod scene;
pub mod separation;
pub mod spectral;
pub mod wav;

pub use error::{Error, Result};
