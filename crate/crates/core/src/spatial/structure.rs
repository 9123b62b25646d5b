//! Candidate covariance structures for the spatial random effects.
//!
//! Each structure is a strategy that turns the data's auxiliary covariates and
//! scaled distances into a [`CovarianceModel`]: an optional identity term plus
//! range-parameterized kernels. Structures are registered by name in a
//! [`CovarianceRegistry`] and picked at runtime (`--cov acac`, ...).

use std::fmt;

use nalgebra::DMatrix;

use super::covariance::mix_unit_covariance;
use super::geo::DistanceMatrix;
use super::kernel::{KernelBase, KernelForm};
use crate::error::{Error, Result};

/// Per-site inputs a structure may draw kernels from.
#[derive(Debug, Clone, Copy)]
pub struct KernelInputs<'a> {
    /// One vector per auxiliary covariate.
    pub aux: &'a [Vec<f64>],
    pub aux_names: &'a [String],
    /// Great-circle distances, already rescaled.
    pub distances: &'a DistanceMatrix,
}

pub trait CovarianceStructure: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn build(&self, inputs: &KernelInputs<'_>) -> Result<CovarianceModel>;
}

/// Unit-variance correlation template `alpha_0 I + sum_j alpha_j K_j(kappa_j)`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    name: String,
    n: usize,
    identity: bool,
    kernels: Vec<(String, KernelBase)>,
}

impl CovarianceModel {
    pub fn new(name: impl Into<String>, n: usize, identity: bool, kernels: Vec<(String, KernelBase)>) -> Result<Self> {
        if !identity && kernels.len() != 1 {
            return Err(Error::Config(
                "a structure without an identity term must have exactly one kernel".into(),
            ));
        }
        if let Some((label, k)) = kernels.iter().find(|(_, k)| k.n() != n) {
            return Err(Error::Input(format!(
                "kernel `{label}` has dimension {}, expected {n}",
                k.n()
            )));
        }
        Ok(CovarianceModel {
            name: name.into(),
            n,
            identity,
            kernels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_kappas(&self) -> usize {
        self.kernels.len()
    }

    pub fn alpha_dim(&self) -> usize {
        self.kernels.len() + 1
    }

    /// Whether the mixing weights are free parameters.
    pub fn alphas_free(&self) -> bool {
        self.identity && !self.kernels.is_empty()
    }

    pub fn kernel_labels(&self) -> Vec<&str> {
        self.kernels.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn kernel_forms(&self) -> Vec<KernelForm> {
        self.kernels.iter().map(|(_, k)| k.form()).collect()
    }

    /// Barycenter when the weights are free, otherwise the fixed weights.
    pub fn initial_alphas(&self) -> Vec<f64> {
        if !self.identity {
            vec![0.0, 1.0]
        } else {
            let m = self.alpha_dim();
            vec![1.0 / m as f64; m]
        }
    }

    pub fn base(&self, j: usize, kappa: f64) -> DMatrix<f64> {
        self.kernels[j].1.evaluate(kappa)
    }

    pub fn bases(&self, kappas: &[f64]) -> Vec<DMatrix<f64>> {
        self.kernels
            .iter()
            .zip(kappas)
            .map(|((_, k), &kappa)| k.evaluate(kappa))
            .collect()
    }

    pub fn unit_covariance(&self, alphas: &[f64], bases: &[DMatrix<f64>]) -> DMatrix<f64> {
        mix_unit_covariance(self.n, alphas, bases)
    }
}

/// Identity plus one exponential similarity kernel per auxiliary covariate,
/// optionally plus an exponential great-circle-distance kernel.
#[derive(Debug, Clone)]
pub struct AcacStructure {
    pub include_gcd: bool,
}

impl Default for AcacStructure {
    fn default() -> Self {
        AcacStructure { include_gcd: true }
    }
}

impl CovarianceStructure for AcacStructure {
    fn name(&self) -> &'static str {
        "acac"
    }

    fn build(&self, inputs: &KernelInputs<'_>) -> Result<CovarianceModel> {
        let n = inputs.distances.n();
        let mut kernels = Vec::with_capacity(inputs.aux.len() + 1);
        for (j, z) in inputs.aux.iter().enumerate() {
            if z.len() != n {
                return Err(Error::Input(format!(
                    "auxiliary covariate {} has {} values for {n} sites",
                    j + 1,
                    z.len()
                )));
            }
            let label = inputs
                .aux_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("z{}", j + 1));
            kernels.push((label, KernelBase::from_covariate(z)?));
        }
        if self.include_gcd {
            kernels.push((
                "gcd".to_string(),
                KernelBase::new(inputs.distances.matrix().clone(), KernelForm::Exponential),
            ));
        }
        if kernels.is_empty() {
            return Err(Error::Config(
                "acac structure needs at least one auxiliary covariate or the distance kernel".into(),
            ));
        }
        CovarianceModel::new(self.name(), n, true, kernels)
    }
}

/// `sigma^2 I`.
#[derive(Debug, Clone, Default)]
pub struct UnityStructure;

impl CovarianceStructure for UnityStructure {
    fn name(&self) -> &'static str {
        "unity"
    }

    fn build(&self, inputs: &KernelInputs<'_>) -> Result<CovarianceModel> {
        CovarianceModel::new(self.name(), inputs.distances.n(), true, Vec::new())
    }
}

/// A single distance kernel with no identity term.
#[derive(Debug, Clone)]
pub struct GcdKernelStructure {
    pub form: KernelForm,
}

impl CovarianceStructure for GcdKernelStructure {
    fn name(&self) -> &'static str {
        match self.form {
            KernelForm::Exponential => "exponential",
            KernelForm::Gaussian => "gaussian",
        }
    }

    fn build(&self, inputs: &KernelInputs<'_>) -> Result<CovarianceModel> {
        let kernel = KernelBase::new(inputs.distances.matrix().clone(), self.form);
        CovarianceModel::new(
            self.name(),
            inputs.distances.n(),
            false,
            vec![("gcd".to_string(), kernel)],
        )
    }
}

/// Name-indexed set of covariance structures, in registration order.
#[derive(Debug)]
pub struct CovarianceRegistry {
    entries: Vec<Box<dyn CovarianceStructure>>,
}

impl CovarianceRegistry {
    pub fn empty() -> Self {
        CovarianceRegistry { entries: Vec::new() }
    }

    /// `acac`, `unity`, `exponential`, `gaussian`.
    pub fn builtin(acac_gcd: bool) -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(AcacStructure { include_gcd: acac_gcd }));
        reg.register(Box::new(UnityStructure));
        reg.register(Box::new(GcdKernelStructure {
            form: KernelForm::Exponential,
        }));
        reg.register(Box::new(GcdKernelStructure {
            form: KernelForm::Gaussian,
        }));
        reg
    }

    /// Adds a structure, replacing any existing one with the same name.
    pub fn register(&mut self, structure: Box<dyn CovarianceStructure>) {
        match self.entries.iter().position(|s| s.name() == structure.name()) {
            Some(i) => self.entries[i] = structure,
            None => self.entries.push(structure),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn CovarianceStructure> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown covariance structure `{name}` (available: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}

impl Default for CovarianceRegistry {
    fn default() -> Self {
        Self::builtin(true)
    }
}
