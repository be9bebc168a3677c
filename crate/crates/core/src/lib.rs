//! Exact L0-regularized (best subset) linear regression by stochastic
//! gradient descent over Bernoulli inclusion probabilities.
//!
//! The subset indicator `z` is replaced by independent `Bernoulli(sigmoid(phi_j))`
//! variables and the expected objective `E_z[f(z)]` is minimized over the
//! logits `phi` with unbiased, low-variance gradient estimators.
//!
//! - [`model`]: datasets, subset least squares, frequentist and Bayesian objectives
//! - [`estimators`]: REINFORCE, ARM, ARM0 and U2G estimators and their diagnostics
//! - [`optimizer`]: the SGD loop, stopping rule, cross-validation and paths
//! - [`datagen`]: synthetic generators and CSV ingestion
//! - [`metrics`]: support recovery and prediction metrics
//! - [`oracles`]: exhaustive search and exact enumeration used for verification

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod oracles;

pub use error::{Error, Result};
