//! Residual-learning correction of short-range precipitation forecasts,
//! with the spatial verification tools used to evaluate it.
//!
//! The crate is organised around a small set of building blocks:
//!
//! - [`grid`]: raster data model, file format, resampling, tiling.
//! - [`residual`]: residual targets and forecast reconstruction.
//! - [`loss`]: intensity-weighted training objective.
//! - [`edm`]: denoiser preconditioning, noise schedule, sampler, training.
//! - [`rollout`]: autoregressive multi-step prediction.
//! - [`uq`]: ensemble bounds from lead-time-offset members.
//! - [`sampler`]: rain-aware tile selection for training and evaluation.
//! - [`verify`]: pixel and neighbourhood skill metrics with bootstrap CIs.
//! - [`spectral`]: power spectra, spectral coherence, intensity histograms.
//! - [`synthworld`]: self-contained synthetic truth/forecast generator.
//! - [`cli`]: the command-line pipeline gluing the above together.

pub mod cli;
pub mod edm;
pub mod error;
pub mod grid;
pub mod loss;
pub mod residual;
pub mod rollout;
pub mod sampler;
pub mod spectral;
pub mod stats;
pub mod synthworld;
pub mod uq;
pub mod verify;

pub use error::{Error, Result};
