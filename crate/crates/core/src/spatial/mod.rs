//! Distances, kernel matrices, the mixture covariance for spatial random
//! effects, and multivariate normal utilities.

mod covariance;
mod geo;
mod kernel;
mod mvn;
mod structure;

pub use covariance::{acac_covariance, mix_unit_covariance, validate_simplex, CovarianceSpec};
pub use geo::{distance_matrix, great_circle_distance, DistanceMatrix, GcdScaling, Location, EARTH_RADIUS_KM};
pub use kernel::{similarity_matrix, weighting_scheme, KernelBase, KernelForm, SimilarityMatrix, WeightingScheme};
pub use mvn::{factorize, mvn_logdensity, mvn_sample, CholeskyFactor};
pub use structure::{
    AcacStructure, CovarianceModel, CovarianceRegistry, CovarianceStructure, GcdKernelStructure, KernelInputs,
    UnityStructure,
};
