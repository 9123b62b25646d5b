//! Conjugate Gibbs updates.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::cache::CovCache;
use crate::error::{Error, Result};
use crate::model::{residuals, Hyperparameters, ModelState, SpatialDataset};
use crate::spatial::factorize;

pub const POSITIVE_FLOOR: f64 = 1e-12;

pub(crate) fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(format!("Gamma({shape}, rate {rate}): {e}")))?;
    Ok(g.sample(rng))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `(mu, tau, beta)` for one coefficient drawn from the base prior.
pub fn fresh_coefficient<R: Rng + ?Sized>(hyper: &Hyperparameters, rng: &mut R) -> Result<(f64, f64, f64)> {
    let mu = hyper.mu0 + normal(rng) / hyper.tau0.sqrt();
    let tau = gamma_draw(hyper.a_tau, hyper.b_tau, rng)?.max(POSITIVE_FLOOR);
    let beta = mu + normal(rng) / tau.sqrt();
    Ok((mu, tau, beta))
}

/// Draws each occupied cluster's coefficient vector from its joint normal
/// conditional, then each hyper-mean and hyper-precision.
pub fn update_cluster_coefficients<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    hyper: &Hyperparameters,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    let p = data.p();
    for h in 0..state.k_active() {
        let members: Vec<usize> = state.partition.members(h).collect();
        if members.is_empty() {
            return Err(Error::Numerical(format!("occupied cluster {h} has no members")));
        }
        let mut prec = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for l in 0..p {
            prec[(l, l)] = state.taus[(h, l)];
            rhs[l] = state.taus[(h, l)] * state.mus[(h, l)];
        }
        if with_likelihood {
            for &i in &members {
                let r = data.y[i] - state.w[i];
                for a in 0..p {
                    let xa = data.x[(i, a)];
                    rhs[a] += state.tau_y * xa * r;
                    for b in 0..p {
                        prec[(a, b)] += state.tau_y * xa * data.x[(i, b)];
                    }
                }
            }
        }
        let chol = Cholesky::new(prec).ok_or_else(|| {
            Error::Numerical(format!("coefficient precision of cluster {h} is not positive definite"))
        })?;
        let mean = chol.solve(&rhs);
        let u = DVector::from_fn(p, |_, _| normal(rng));
        let l = chol.l();
        let dev = l
            .tr_solve_lower_triangular(&u)
            .expect("triangular factor is invertible");
        for a in 0..p {
            state.betas[(h, a)] = mean[a] + dev[a];
        }
        for a in 0..p {
            let (beta, tau) = (state.betas[(h, a)], state.taus[(h, a)]);
            let pm = hyper.tau0 + tau;
            state.mus[(h, a)] = (hyper.tau0 * hyper.mu0 + tau * beta) / pm + normal(rng) / pm.sqrt();
            let dev = beta - state.mus[(h, a)];
            state.taus[(h, a)] = gamma_draw(hyper.a_tau + 0.5, hyper.b_tau + 0.5 * dev * dev, rng)?.max(POSITIVE_FLOOR);
        }
    }
    Ok(())
}

/// Draws `w` from its Gaussian conditional with precision
/// `tau_y I + (sigma^2 H)^{-1}`, by perturbing prior and noise draws and
/// correcting with one solve against `sigma^2 H + I / tau_y`.
pub fn update_random_effects<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    cache: &CovCache,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    let n = data.n();
    let sigma = state.sigma2.sqrt();
    let u = DVector::from_fn(n, |_, _| normal(rng));
    let w0 = cache.factor.correlate(&u) * sigma;
    if !with_likelihood {
        state.w = w0;
        return Ok(());
    }
    let noise_sd = 1.0 / state.tau_y.sqrt();
    let e0 = DVector::from_fn(n, |_, _| normal(rng) * noise_sd);
    state.w.fill(0.0);
    let target = residuals(data, state);
    let mut m = &cache.h * state.sigma2;
    for i in 0..n {
        m[(i, i)] += 1.0 / state.tau_y;
    }
    let f = factorize(&m)?;
    let v = f.solve(&(target - &w0 - e0));
    state.w = &w0 + (&cache.h * v) * state.sigma2;
    Ok(())
}

/// `tau_y ~ Gamma(a1 + n/2, b1 + r'r/2)`.
pub fn update_tau_y<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    hyper: &Hyperparameters,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    let (shape, rate) = if with_likelihood {
        let r = residuals(data, state);
        (hyper.a1 + 0.5 * data.n() as f64, hyper.b1 + 0.5 * r.norm_squared())
    } else {
        (hyper.a1, hyper.b1)
    };
    state.tau_y = gamma_draw(shape, rate, rng)?.max(POSITIVE_FLOOR);
    Ok(())
}

/// `sigma^2 ~ InverseGamma(a2 + n/2, b2 + w' H^{-1} w / 2)`.
pub fn update_sigma2<R: Rng + ?Sized>(
    state: &mut ModelState,
    cache: &CovCache,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let q = cache.factor.quad_form(&state.w);
    let shape = hyper.a2 + 0.5 * state.w.len() as f64;
    let scale = hyper.b2 + 0.5 * q;
    state.sigma2 = (1.0 / gamma_draw(shape, scale, rng)?).max(POSITIVE_FLOOR);
    Ok(())
}

/// `tau_y` then `sigma^2`.
pub fn update_precisions<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    cache: &CovCache,
    hyper: &Hyperparameters,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    update_tau_y(data, state, hyper, with_likelihood, rng)?;
    update_sigma2(state, cache, hyper, rng)
}
