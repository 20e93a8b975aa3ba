//! Mixed-type diffusion for multivariate time series.
//!
//! Numerical channels are generated with Gaussian (DDPM-style) diffusion and
//! discrete channels, including missing-value indicator masks, with
//! multinomial diffusion. A single time-conditional bidirectional LSTM
//! denoises both branches jointly. The [`eval`] module provides
//! discriminative, predictive and nearest-neighbour adversarial accuracy
//! metrics for judging synthetic output.

pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod multinomial;
pub mod nn;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
pub use schedule::DiffusionSchedule;
