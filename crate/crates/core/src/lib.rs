//! Bayesian clustered coefficients regression with mixture-of-finite-mixtures
//! clustering and an auxiliary-covariate-assisted covariance for spatial
//! random effects.

pub mod cli;
pub mod error;
pub mod fit;
pub mod io;
pub mod mcmc;
pub mod mfm;
pub mod model;
pub mod posterior;
pub mod sim;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
