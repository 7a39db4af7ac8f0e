//! Conditional behavior prediction over trajectory Gaussian mixtures, with
//! an information-theoretic interactivity score between agents, exercised
//! on synthetic driving scenes with known causal structure.
//!
//! The crate is organized around:
//! - [`trajectory`] / [`gmm`]: trajectory types and exact mixture
//!   probability operations (log-likelihood, sampling, top-mode selection);
//! - [`sim`]: seeded scene generation and dataset splitting;
//! - [`model`]: the trainable encoder/decoder predictor producing
//!   per-agent trajectory mixtures, with analytic gradients;
//! - [`interactivity`]: KL degree-of-influence and mutual-information
//!   estimators with Monte-Carlo diagnostics;
//! - [`metrics`]: displacement-error metrics and aggregation;
//! - [`dataset`]: JSONL dataset files and manifests.

pub mod dataset;
pub mod error;
pub mod gmm;
pub mod interactivity;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sim;
pub mod trajectory;

pub use error::{CbpError, Result};
