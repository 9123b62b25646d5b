use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::partition::Partition;
use crate::error::{Error, Result};
use crate::spatial::validate_simplex;

/// Settings of the MFM prior `k - 1 ~ Poisson(lambda)`, `pi | k ~ Dirichlet(gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfmConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Truncation of the component count during conditional sampling.
    pub k_max: usize,
}

impl Default for MfmConfig {
    fn default() -> Self {
        MfmConfig {
            gamma: 1.0,
            lambda: 1.0,
            k_max: 20,
        }
    }
}

impl MfmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.lambda > 0.0) || self.k_max < 1 {
            return Err(Error::Config(format!(
                "MFM requires gamma > 0, lambda > 0, k_max >= 1 (got {}, {}, {})",
                self.gamma, self.lambda, self.k_max
            )));
        }
        Ok(())
    }
}

/// Mixture weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pi: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        validate_simplex(&pi, 1e-12)?;
        Ok(MixtureWeights { pi })
    }

    pub fn uniform(k: usize) -> Self {
        MixtureWeights {
            pi: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }
}

/// Log of the `1 + Poisson(lambda)` pmf at `k`.
pub fn ln_k_prior_pmf(k: usize, lambda: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::Parameter("component count must be at least 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
    }
    let j = (k - 1) as f64;
    Ok(-lambda + j * lambda.ln() - ln_gamma(j + 1.0))
}

/// `exp(-lambda) lambda^(k-1) / (k-1)!`.
pub fn k_prior_pmf(k: usize, lambda: f64) -> Result<f64> {
    ln_k_prior_pmf(k, lambda).map(f64::exp)
}

/// Draws `(k, pi)` by accumulating `Exp(lambda)` increments until they reach one.
pub fn mfm_stick_breaking<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<(usize, MixtureWeights)> {
    let exp = Exp::new(lambda).map_err(|e| Error::Parameter(format!("Exp({lambda}): {e}")))?;
    let mut draws = std::iter::from_fn(|| Some(exp.sample(rng)));
    mfm_weights_from_increments(&mut draws)
}

/// The deterministic part of the MFM construction, for injected increments.
pub fn mfm_weights_from_increments(increments: &mut dyn Iterator<Item = f64>) -> Result<(usize, MixtureWeights)> {
    let mut pi = Vec::new();
    let mut total = 0.0;
    loop {
        let eta = increments
            .next()
            .ok_or_else(|| Error::Input("increment stream ended before reaching 1".into()))?;
        if !(eta >= 0.0) {
            return Err(Error::Input(format!("negative increment {eta}")));
        }
        if total + eta >= 1.0 {
            pi.push(1.0 - total);
            break;
        }
        total += eta;
        pi.push(eta);
    }
    let k = pi.len();
    Ok((k, MixtureWeights { pi }))
}

/// Truncated Dirichlet-process stick-breaking with `Beta(1, alpha)` fractions.
pub fn dp_stick_breaking<R: Rng + ?Sized>(alpha_conc: f64, truncation: usize, rng: &mut R) -> Result<MixtureWeights> {
    if truncation < 1 {
        return Err(Error::Parameter("truncation must be at least 1".into()));
    }
    let beta = Beta::new(1.0, alpha_conc).map_err(|e| Error::Parameter(format!("Beta(1, {alpha_conc}): {e}")))?;
    let fractions: Vec<f64> = (0..truncation - 1).map(|_| beta.sample(rng)).collect();
    dp_weights_from_fractions(&fractions, truncation)
}

/// `pi_h = zeta_h prod_{l<h} (1 - zeta_l)`; the last weight takes the remainder.
pub fn dp_weights_from_fractions(fractions: &[f64], truncation: usize) -> Result<MixtureWeights> {
    if truncation < 1 || fractions.len() + 1 < truncation {
        return Err(Error::Input(format!(
            "need {} stick fractions for truncation {truncation}, got {}",
            truncation.saturating_sub(1),
            fractions.len()
        )));
    }
    let mut pi = Vec::with_capacity(truncation);
    let mut remaining = 1.0;
    for &z in &fractions[..truncation - 1] {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::Input(format!("stick fraction {z} outside [0, 1]")));
        }
        pi.push(z * remaining);
        remaining *= 1.0 - z;
    }
    pi.push(remaining);
    Ok(MixtureWeights { pi })
}

/// Unnormalized log weights of `p(k | partition)` for `k = t..=k_max`, with the
/// mixture weights integrated out.
pub fn conditional_k_log_weights(part: &Partition, cfg: &MfmConfig) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    let t = part.k_active();
    let n = part.n() as f64;
    if cfg.k_max < t {
        return Err(Error::Config(format!(
            "k_max = {} is below the {} occupied clusters",
            cfg.k_max, t
        )));
    }
    let g = cfg.gamma;
    (t.max(1)..=cfg.k_max)
        .map(|k| {
            let kf = k as f64;
            let lw = ln_k_prior_pmf(k, cfg.lambda)? + ln_gamma(kf + 1.0) - ln_gamma(kf - t as f64 + 1.0)
                + ln_gamma(g * kf)
                - ln_gamma(g * kf + n);
            Ok((k, lw))
        })
        .collect()
}

pub fn conditional_k_sample<R: Rng + ?Sized>(part: &Partition, cfg: &MfmConfig, rng: &mut R) -> Result<usize> {
    let weights = conditional_k_log_weights(part, cfg)?;
    let logs: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    let idx = sample_log_categorical(&logs, rng)?;
    Ok(weights[idx].0)
}

/// `Dirichlet(gamma + n_1, ..., gamma + n_t, gamma, ..., gamma)` with `k` slots.
pub fn conditional_weights<R: Rng + ?Sized>(
    k: usize,
    part: &Partition,
    gamma: f64,
    rng: &mut R,
) -> Result<MixtureWeights> {
    if k < part.k_active() {
        return Err(Error::Parameter(format!(
            "k = {k} is below the {} occupied clusters",
            part.k_active()
        )));
    }
    let conc: Vec<f64> = (0..k)
        .map(|h| gamma + part.counts().get(h).copied().unwrap_or(0) as f64)
        .collect();
    Ok(MixtureWeights {
        pi: sample_dirichlet(&conc, rng)?,
    })
}

/// Dirichlet draw computed in log space, so tiny concentrations never yield
/// an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if conc.is_empty() {
        return Err(Error::Parameter("Dirichlet needs at least one component".into()));
    }
    let logs = conc
        .iter()
        .map(|&a| {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Parameter(format!(
                    "Dirichlet concentration must be positive, got {a}"
                )));
            }
            if a >= 1.0 {
                let g = Gamma::new(a, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
                Ok(g.sample(rng).ln())
            } else {
                // Gamma(a) = Gamma(a + 1) * U^(1/a)
                let g = Gamma::new(a + 1.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
                let u: f64 = rng.sample(Open01);
                Ok(g.sample(rng).ln() + u.ln() / a)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// Draws an index with probability proportional to `exp(logs[i])`.
pub fn sample_log_categorical<R: Rng + ?Sized>(logs: &[f64], rng: &mut R) -> Result<usize> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(format!(
            "categorical weights are all zero or invalid (max log weight {max})"
        )));
    }
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, l) in logs.iter().enumerate() {
        let p = (l - max).exp();
        if u < p {
            return Ok(i);
        }
        u -= p;
    }
    // rounding fallthrough: last index with positive mass
    Ok(logs.iter().rposition(|l| (l - max).exp() > 0.0).unwrap_or(0))
}
