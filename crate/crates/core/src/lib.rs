//! Disentangled Gaussian-process VAE for multivariate time series.
//!
//! Each latent channel carries its own GP prior (Cauchy kernel, per-channel
//! length scale) and the approximate posterior is a Gauss–Markov process
//! per channel whose precision is `BᵀB` for an upper-bidiagonal `B`.
//! The crate also ships the synthetic-data pipeline and the DCI / AUROC
//! evaluation used to measure disentanglement.

// `!(x > 0.0)` is used on purpose throughout validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod dci;
pub mod downstream;
pub mod error;
pub mod io;
pub mod kernels;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
