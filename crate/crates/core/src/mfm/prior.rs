//! Clustering priors usable by the sampler, selectable by name.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::partition::Partition;
use super::stick::{conditional_k_sample, ln_k_prior_pmf, sample_dirichlet, MfmConfig, MixtureWeights};
use crate::error::{Error, Result};

/// A prior over `(k, pi)` with exchangeable labels.
pub trait ClusterPrior: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Largest component count the sampler may use.
    fn k_max(&self) -> usize;

    /// Whether the Poisson rate is a sampled parameter.
    fn learns_lambda(&self) -> bool;

    /// Starting (or fixed) value of the Poisson rate; ignored by priors that
    /// do not use one.
    fn initial_lambda(&self) -> f64;

    fn initial_k(&self) -> usize;

    /// `k | z` with the weights integrated out.
    fn sample_k(&self, part: &Partition, lambda: f64, rng: &mut dyn RngCore) -> Result<usize>;

    /// `pi | k, z`, occupied clusters in the first `k_active` slots.
    fn sample_weights(&self, k: usize, part: &Partition, rng: &mut dyn RngCore) -> Result<MixtureWeights>;

    /// `log p(k | lambda) + log p(pi | k)`.
    fn log_prior(&self, weights: &MixtureWeights, lambda: f64) -> f64;

    /// `log p(k | lambda)` on the truncated support, for updating `lambda`.
    fn log_k_given_lambda(&self, k: usize, lambda: f64) -> f64;

    /// Log probability of a set partition with the given block sizes, with
    /// `k` and `pi` integrated out.
    fn log_partition_prob(&self, counts: &[usize], lambda: f64) -> f64;
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `sum_c log Gamma(n_c + a) - log Gamma(a)`.
fn log_rising_blocks(counts: &[usize], a: f64) -> f64 {
    counts.iter().map(|&m| ln_gamma(m as f64 + a) - ln_gamma(a)).sum()
}

/// Mixture of finite mixtures: `k - 1 ~ Poisson(lambda)` truncated at `k_max`,
/// `pi | k ~ Dirichlet(gamma, ..., gamma)`.
#[derive(Debug, Clone)]
pub struct MfmPrior {
    pub gamma: f64,
    pub k_max: usize,
    pub lambda: f64,
    pub learn_lambda: bool,
}

impl MfmPrior {
    fn config(&self, lambda: f64) -> MfmConfig {
        MfmConfig {
            gamma: self.gamma,
            lambda,
            k_max: self.k_max,
        }
    }
}

impl ClusterPrior for MfmPrior {
    fn name(&self) -> &'static str {
        "mfm"
    }

    fn k_max(&self) -> usize {
        self.k_max
    }

    fn learns_lambda(&self) -> bool {
        self.learn_lambda
    }

    fn initial_lambda(&self) -> f64 {
        self.lambda
    }

    fn initial_k(&self) -> usize {
        1
    }

    fn sample_k(&self, part: &Partition, lambda: f64, rng: &mut dyn RngCore) -> Result<usize> {
        conditional_k_sample(part, &self.config(lambda), rng)
    }

    fn sample_weights(&self, k: usize, part: &Partition, rng: &mut dyn RngCore) -> Result<MixtureWeights> {
        super::stick::conditional_weights(k, part, self.gamma, rng)
    }

    fn log_prior(&self, weights: &MixtureWeights, lambda: f64) -> f64 {
        self.log_k_given_lambda(weights.k(), lambda) + log_symmetric_dirichlet(weights.as_slice(), self.gamma)
    }

    fn log_k_given_lambda(&self, k: usize, lambda: f64) -> f64 {
        if k < 1 || k > self.k_max {
            return f64::NEG_INFINITY;
        }
        let ln = |j: usize| ln_k_prior_pmf(j, lambda).unwrap_or(f64::NEG_INFINITY);
        let mass: f64 = (1..=self.k_max).map(|j| ln(j).exp()).sum();
        ln(k) - mass.ln()
    }

    fn log_partition_prob(&self, counts: &[usize], lambda: f64) -> f64 {
        let t = counts.len();
        let n: usize = counts.iter().sum();
        if t == 0 || t > self.k_max {
            return f64::NEG_INFINITY;
        }
        let g = self.gamma;
        let terms: Vec<f64> = (t..=self.k_max)
            .map(|k| {
                let kf = k as f64;
                self.log_k_given_lambda(k, lambda) + ln_gamma(kf + 1.0) - ln_gamma(kf - t as f64 + 1.0)
                    + ln_gamma(g * kf)
                    - ln_gamma(g * kf + n as f64)
            })
            .collect();
        log_sum_exp(&terms) + log_rising_blocks(counts, g)
    }
}

/// Finite symmetric-Dirichlet approximation of a Dirichlet process:
/// `k` fixed at the truncation level, `pi ~ Dirichlet(alpha / k, ..., alpha / k)`.
#[derive(Debug, Clone)]
pub struct DirichletProcessPrior {
    pub concentration: f64,
    pub truncation: usize,
}

impl ClusterPrior for DirichletProcessPrior {
    fn name(&self) -> &'static str {
        "dp"
    }

    fn k_max(&self) -> usize {
        self.truncation
    }

    fn learns_lambda(&self) -> bool {
        false
    }

    fn initial_lambda(&self) -> f64 {
        1.0
    }

    fn initial_k(&self) -> usize {
        self.truncation
    }

    fn sample_k(&self, part: &Partition, _lambda: f64, _rng: &mut dyn RngCore) -> Result<usize> {
        if part.k_active() > self.truncation {
            return Err(Error::Config(format!(
                "{} occupied clusters exceed the truncation {}",
                part.k_active(),
                self.truncation
            )));
        }
        Ok(self.truncation)
    }

    fn sample_weights(&self, k: usize, part: &Partition, rng: &mut dyn RngCore) -> Result<MixtureWeights> {
        let a = self.concentration / k as f64;
        let conc: Vec<f64> = (0..k)
            .map(|h| a + part.counts().get(h).copied().unwrap_or(0) as f64)
            .collect();
        MixtureWeights::new(sample_dirichlet(&conc, rng)?)
    }

    fn log_prior(&self, weights: &MixtureWeights, _lambda: f64) -> f64 {
        log_symmetric_dirichlet(weights.as_slice(), self.concentration / weights.k() as f64)
    }

    fn log_k_given_lambda(&self, k: usize, _lambda: f64) -> f64 {
        if k == self.truncation {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_partition_prob(&self, counts: &[usize], _lambda: f64) -> f64 {
        let t = counts.len();
        if t == 0 || t > self.truncation {
            return f64::NEG_INFINITY;
        }
        let k = self.truncation as f64;
        let n: usize = counts.iter().sum();
        let a = self.concentration / k;
        ln_gamma(k + 1.0) - ln_gamma(k - t as f64 + 1.0) + ln_gamma(self.concentration)
            - ln_gamma(self.concentration + n as f64)
            + log_rising_blocks(counts, a)
    }
}

/// Log density of `Dirichlet(a, ..., a)` at `pi` (zero for a single component).
pub fn log_symmetric_dirichlet(pi: &[f64], a: f64) -> f64 {
    let k = pi.len() as f64;
    ln_gamma(a * k) - k * ln_gamma(a) + (a - 1.0) * pi.iter().map(|p| p.ln()).sum::<f64>()
}

/// User-facing settings from which any registered prior can be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterPriorSettings {
    pub gamma: f64,
    pub k_max: usize,
    /// Initial value of the Poisson rate, or its fixed value when not learned.
    pub lambda: f64,
    pub learn_lambda: bool,
    pub dp_concentration: f64,
}

impl Default for ClusterPriorSettings {
    fn default() -> Self {
        ClusterPriorSettings {
            gamma: 1.0,
            k_max: 20,
            lambda: 1.0,
            learn_lambda: true,
            dp_concentration: 1.0,
        }
    }
}

type PriorBuilder = fn(&ClusterPriorSettings) -> Result<Box<dyn ClusterPrior>>;

/// Name-indexed constructors of clustering priors.
pub struct ClusterPriorRegistry {
    entries: Vec<(&'static str, PriorBuilder)>,
}

impl fmt::Debug for ClusterPriorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|(n, _)| n)).finish()
    }
}

fn build_mfm(s: &ClusterPriorSettings) -> Result<Box<dyn ClusterPrior>> {
    MfmConfig {
        gamma: s.gamma,
        lambda: s.lambda,
        k_max: s.k_max,
    }
    .validate()?;
    Ok(Box::new(MfmPrior {
        gamma: s.gamma,
        k_max: s.k_max,
        lambda: s.lambda,
        learn_lambda: s.learn_lambda,
    }))
}

fn build_dp(s: &ClusterPriorSettings) -> Result<Box<dyn ClusterPrior>> {
    if !(s.dp_concentration > 0.0) || s.k_max < 1 {
        return Err(Error::Config(format!(
            "dp prior needs concentration > 0 and truncation >= 1 (got {}, {})",
            s.dp_concentration, s.k_max
        )));
    }
    Ok(Box::new(DirichletProcessPrior {
        concentration: s.dp_concentration,
        truncation: s.k_max,
    }))
}

impl ClusterPriorRegistry {
    pub fn empty() -> Self {
        ClusterPriorRegistry { entries: Vec::new() }
    }

    pub fn register(&mut self, name: &'static str, builder: PriorBuilder) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, builder));
    }

    pub fn build(&self, name: &str, settings: &ClusterPriorSettings) -> Result<Box<dyn ClusterPrior>> {
        let (_, builder) = self.entries.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown cluster prior `{name}` (available: {})",
                self.names().join(", ")
            ))
        })?;
        builder(settings)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

impl Default for ClusterPriorRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("mfm", build_mfm);
        reg.register("dp", build_dp);
        reg
    }
}
