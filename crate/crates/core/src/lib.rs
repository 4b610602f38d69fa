//! Smoothing diagnostics for Bayesian disease-mapping priors.
//!
//! The crate builds neighbourhood graphs, constructs spatial prior
//! precision matrices, fits Poisson-logitNormal models by adaptive
//! Metropolis, and measures how much each prior shrinks crude rates.

pub mod error;
pub mod geometry;
pub mod graph;
pub mod mcmc;
pub mod metrics;
pub mod numerics;
pub mod pgamma;
pub mod priors;
pub mod simgen;
pub mod study;

pub use error::{Error, Result};
