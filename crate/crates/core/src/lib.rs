//! Multi-head attention variational autoencoder for anomaly detection in
//! multivariate time series.
//!
//! The crate covers the whole pipeline: signal preparation and a synthetic
//! test-bench generator ([`datapipe`]), the differentiable model
//! ([`numerics`], [`layers`], [`model`]), training ([`training`]), reverse-window
//! scoring and thresholding ([`detect`]), and sequence-level metrics ([`eval`]).

pub mod cli;
pub mod datapipe;
pub mod detect;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod layers;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
