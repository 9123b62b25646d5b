//! Mixture-of-finite-mixtures clustering prior and its samplers.

mod partition;
mod prior;
mod stick;

pub use partition::{canonical_relabel, Partition};
pub use prior::{
    log_symmetric_dirichlet, ClusterPrior, ClusterPriorRegistry, ClusterPriorSettings, DirichletProcessPrior, MfmPrior,
};
pub use stick::{
    conditional_k_log_weights, conditional_k_sample, conditional_weights, dp_stick_breaking, dp_weights_from_fractions,
    k_prior_pmf, ln_k_prior_pmf, mfm_stick_breaking, mfm_weights_from_increments, sample_dirichlet,
    sample_log_categorical, MfmConfig, MixtureWeights,
};
