//! Learning continuous-time dynamics from noisy time series.
//!
//! A feed-forward network representing the vector field is embedded in an
//! explicit Runge-Kutta stepper; network parameters and per-sample
//! measurement-noise estimates are optimized jointly against a windowed
//! multi-step prediction loss. The crate provides the benchmark systems,
//! ground-truth integrators, noise synthesis, the model and its gradients,
//! an L-BFGS solver, evaluation metrics, and file formats for the CLI.

pub mod corrupt;
pub mod error;
pub mod experiment;
pub mod integrate;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optimize;
pub mod stepper;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
