//! Bayesian hierarchical fusion of gridded model ensembles with observations.
//!
//! The model treats every field as a Gaussian process on a shared spatial
//! grid. Each simulator's mean field scatters around a latent consensus
//! field with spatially correlated, inter-model-correlated noise; individual
//! runs add internal variability; reality ("expected climate") is one more
//! draw from the consensus, observed through natural variability and
//! measurement noise. A regression coefficient shared by simulators and
//! reality ties historical deviations to future ones.
//!
//! Modules:
//! - [`covariance`]: Whittle kernel, correlation matrices, jittered Cholesky
//!   factorization, and precision-form Gaussian sampling.
//! - [`model`]: data/state/parameter types, priors, model variants, and the
//!   exact joint log-density used as the correctness oracle for the sampler.
//! - [`simulate`]: forward generation of synthetic datasets.
//! - [`sampler`]: the Gibbs/Metropolis-Hastings chain.
//! - [`summarize`]: posterior summaries and ensemble-mean comparisons.
//! - [`diagnostics`]: effective sample size, trace export, and the
//!   getting-it-right joint-distribution test.

pub mod covariance;
pub mod diagnostics;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod summarize;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
