//! Parallel MCMC by state-space partitioning.
//!
//! The pipeline: explore a multimodal target with parallel tempering, cut the
//! state space into regions by spectral clustering of the proposal affinity,
//! run one restricted Metropolis-Hastings chain per region, estimate each
//! region's probability mass by bridge sampling, and combine the per-region
//! ergodic averages into a single low-variance estimate. The [`analysis`]
//! module computes the supporting spectral quantities (gaps, conductances,
//! variance bounds) exactly on small discrete chains.
//!
//! Every random decision flows from a single `u64` seed through counter-based
//! ChaCha streams (see [`rng`]), so all results are reproducible bit for bit
//! regardless of thread scheduling.

pub mod analysis;
pub mod csvio;
pub mod error;
pub mod explore;
pub mod mh;
pub mod orchestrator;
pub mod parallel;
pub mod partition;
pub mod quadrature;
pub mod rng;
pub mod targets;
pub mod weights;

pub use error::{Error, Result};

/// A point of the state space: a real vector of the target's dimension.
pub type State = Vec<f64>;
