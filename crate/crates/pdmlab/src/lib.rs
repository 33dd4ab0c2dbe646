//! Predictive-maintenance policy optimization laboratory.
//!
//! A synthetic device fleet feeds a feature stack (spectral amplitudes plus a
//! Fourier neural operator over denoising-autoencoder latents), a graph
//! convolution over equipment groups, and an offline PPO actor-critic. A tabular
//! Q-learning baseline and a value-iteration oracle sit alongside.

pub mod baseline;
pub mod config;
pub mod dae;
pub mod error;
pub mod features;
pub mod graph;
pub mod harness;
pub mod numerics;
pub mod persist;
pub mod plantsim;
pub mod policy;

pub use error::{Error, Result};
