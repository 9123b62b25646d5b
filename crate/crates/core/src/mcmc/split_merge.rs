//! Split-merge Metropolis-Hastings move on the partition.
//!
//! The target is the partition, the cluster precisions, `sigma^2` and
//! `tau_y`, with the random effects, the coefficients, their hyper-means and
//! `(k, pi)` integrated out: `y ~ N(X_z mu0, sigma^2 H + I / tau_y + U D U')`,
//! where `U` spreads each cluster's design rows into its own columns. Splits
//! are proposed by restricted Gibbs scans under a cheap independent-sites
//! surrogate. Half of the proposals also move `sigma^2` down and `tau_y` up
//! on a split, and the reverse on a merge. On acceptance the coefficients,
//! hyper-means and random effects are redrawn from their joint conditional.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::cache::CovCache;
use super::updates::{fresh_coefficient, update_random_effects, POSITIVE_FLOOR};
use crate::error::{Error, Result};
use crate::mfm::{canonical_relabel, ClusterPrior, Partition};
use crate::model::{gamma_logpdf, inverse_gamma_logpdf, Hyperparameters, ModelState, SpatialDataset};
use crate::spatial::{factorize, CholeskyFactor};

const LAUNCH_SCANS: usize = 3;
/// Probability that a proposal also rescales `sigma^2` and `tau_y`.
const RESCALE_PROB: f64 = 0.5;
/// Standard deviation of the log rescaling factors.
const RESCALE_SD: f64 = 1.0;

/// Random-effect variance and response precision.
#[derive(Debug, Clone, Copy)]
struct Scales {
    sigma2: f64,
    tau_y: f64,
}

impl Scales {
    fn of(state: &ModelState) -> Self {
        Scales {
            sigma2: state.sigma2,
            tau_y: state.tau_y,
        }
    }

    /// Shrinks `sigma^2` by `e^u` and grows `tau_y` by `e^v` (`sign = 1`),
    /// or the reverse (`sign = -1`). Returns the log Jacobian with it.
    fn shifted(self, u: f64, v: f64, sign: f64) -> (Self, f64) {
        let next = Scales {
            sigma2: self.sigma2 * (-sign * u).exp(),
            tau_y: self.tau_y * (sign * v).exp(),
        };
        (next, sign * (v - u))
    }

    fn log_prior(self, hyper: &Hyperparameters) -> f64 {
        inverse_gamma_logpdf(self.sigma2, hyper.a2, hyper.b2) + gamma_logpdf(self.tau_y, hyper.a1, hyper.b1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMergeOutcome {
    pub split: bool,
    pub accepted: bool,
}

/// Data-side quantities shared by every marginal likelihood evaluation.
struct Marginal<'a> {
    data: &'a SpatialDataset,
    hyper: &'a Hyperparameters,
    factor: CholeskyFactor,
    /// `L^{-1} (y - X mu0)`.
    s: DVector<f64>,
    /// `L^{-1} y`.
    sy: DVector<f64>,
}

/// `log N(y | X mu0, M + U D U')` together with the pieces needed to draw
/// the coefficients.
struct Evaluated {
    log_lik: f64,
    /// `D^{-1} + U' M^{-1} U`.
    g: DMatrix<f64>,
    v: DMatrix<f64>,
    d: Vec<f64>,
}

impl<'a> Marginal<'a> {
    fn new(data: &'a SpatialDataset, scales: Scales, cache: &CovCache, hyper: &'a Hyperparameters) -> Result<Self> {
        let mut m = &cache.h * scales.sigma2;
        for i in 0..data.n() {
            m[(i, i)] += 1.0 / scales.tau_y;
        }
        let factor = factorize(&m)?;
        let shift = DVector::from_fn(data.n(), |i, _| hyper.mu0 * data.x.row(i).sum());
        let y = DVector::from_column_slice(&data.y);
        let l = factor.l();
        let s = l
            .solve_lower_triangular(&(&y - shift))
            .expect("triangular factor is invertible");
        let sy = l.solve_lower_triangular(&y).expect("triangular factor is invertible");
        Ok(Marginal {
            data,
            hyper,
            factor,
            s,
            sy,
        })
    }

    fn evaluate(&self, labels: &[usize], taus: &DMatrix<f64>) -> Result<Evaluated> {
        let n = self.data.n();
        let p = self.data.p();
        let t = taus.nrows();
        let mut u = DMatrix::<f64>::zeros(n, t * p);
        for i in 0..n {
            for l in 0..p {
                u[(i, labels[i] * p + l)] = self.data.x[(i, l)];
            }
        }
        let v = self
            .factor
            .l()
            .solve_lower_triangular(&u)
            .expect("triangular factor is invertible");
        let d: Vec<f64> = (0..t * p)
            .map(|c| 1.0 / taus[(c / p, c % p)] + 1.0 / self.hyper.tau0)
            .collect();
        let mut g = v.transpose() * &v;
        for (c, dc) in d.iter().enumerate() {
            g[(c, c)] += 1.0 / dc;
        }
        let chol = Cholesky::new(g.clone())
            .ok_or_else(|| Error::Numerical("collapsed coefficient precision is not positive definite".into()))?;
        let b = v.transpose() * &self.s;
        let quad = self.s.norm_squared() - b.dot(&chol.solve(&b));
        let log_det_g: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_det_d: f64 = d.iter().map(|x| x.ln()).sum();
        let log_lik = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln() + self.factor.log_det() + log_det_d + log_det_g + quad);
        Ok(Evaluated { log_lik, g, v, d })
    }
}

/// Per-side sufficient statistics of the allocation surrogate: independent
/// sites with variance `s2` and coefficients `N(mu0, v0 I)` integrated out.
struct Side {
    count: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

struct Surrogate<'a> {
    data: &'a SpatialDataset,
    s2: f64,
    v0: f64,
    mu0: f64,
    with_likelihood: bool,
}

impl Surrogate<'_> {
    fn empty(&self) -> Side {
        let p = self.data.p();
        Side {
            count: 0,
            xtx: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
        }
    }

    fn add(&self, side: &mut Side, i: usize, sign: f64) {
        let x = self.data.x.row(i);
        side.count = if sign > 0.0 { side.count + 1 } else { side.count - 1 };
        side.xtx += x.transpose() * x * sign;
        side.xty += x.transpose() * (self.data.y[i] * sign);
    }

    fn log_weight(&self, side: &Side, i: usize) -> f64 {
        let mut lw = (side.count as f64).ln();
        if !self.with_likelihood {
            return lw;
        }
        let p = self.data.p();
        let mut prec = &side.xtx / self.s2;
        let mut rhs = &side.xty / self.s2;
        for l in 0..p {
            prec[(l, l)] += 1.0 / self.v0;
            rhs[l] += self.mu0 / self.v0;
        }
        let chol = Cholesky::new(prec).expect("surrogate precision is positive definite");
        let mean = chol.solve(&rhs);
        let x = self.data.x.row(i).transpose();
        let var = self.s2 + x.dot(&chol.solve(&x));
        let r = self.data.y[i] - x.dot(&mean);
        lw += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var);
        lw
    }

    /// One restricted Gibbs scan over `others`. With `forced`, the scan is
    /// driven to that allocation and only its probability is accumulated.
    fn scan<R: Rng + ?Sized>(
        &self,
        sides: &mut [Side; 2],
        alloc: &mut [usize],
        others: &[usize],
        forced: Option<&[usize]>,
        rng: &mut R,
    ) -> f64 {
        let mut log_q = 0.0;
        for (pos, &i) in others.iter().enumerate() {
            self.add(&mut sides[alloc[pos]], i, -1.0);
            let la = self.log_weight(&sides[0], i);
            let lb = self.log_weight(&sides[1], i);
            let m = la.max(lb);
            let log_norm = m + ((la - m).exp() + (lb - m).exp()).ln();
            let choice = match forced {
                Some(f) => f[pos],
                None => usize::from(rng.random::<f64>() >= (la - log_norm).exp()),
            };
            log_q += if choice == 0 { la } else { lb } - log_norm;
            alloc[pos] = choice;
            self.add(&mut sides[choice], i, 1.0);
        }
        log_q
    }

    /// Randomized launch state followed by intermediate scans.
    fn launch<R: Rng + ?Sized>(&self, anchors: [usize; 2], others: &[usize], rng: &mut R) -> ([Side; 2], Vec<usize>) {
        let mut sides = [self.empty(), self.empty()];
        self.add(&mut sides[0], anchors[0], 1.0);
        self.add(&mut sides[1], anchors[1], 1.0);
        let mut alloc: Vec<usize> = others.iter().map(|_| usize::from(rng.random::<bool>())).collect();
        for (pos, &i) in others.iter().enumerate() {
            self.add(&mut sides[alloc[pos]], i, 1.0);
        }
        for _ in 0..LAUNCH_SCANS {
            self.scan(&mut sides, &mut alloc, others, None, rng);
        }
        (sides, alloc)
    }
}

/// Log density of `y` under `labels` and cluster precisions `taus` with the
/// coefficients, hyper-means and random effects integrated out.
pub fn collapsed_log_likelihood(
    data: &SpatialDataset,
    state: &ModelState,
    cache: &CovCache,
    hyper: &Hyperparameters,
    labels: &[usize],
    taus: &DMatrix<f64>,
) -> Result<f64> {
    Ok(Marginal::new(data, Scales::of(state), cache, hyper)?
        .evaluate(labels, taus)?
        .log_lik)
}

/// Draws all cluster coefficients and hyper-means from their joint
/// conditional with the random effects integrated out.
fn redraw_coefficients<R: Rng + ?Sized>(
    marginal: &Marginal,
    eval: &Evaluated,
    state: &mut ModelState,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    let hyper = marginal.hyper;
    let p = marginal.data.p();
    let t = state.taus.nrows();
    let dim = t * p;
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::from_fn(dim, |c, _| hyper.mu0 / eval.d[c]);
    if with_likelihood {
        g.copy_from(&eval.g);
        rhs += eval.v.transpose() * &marginal.sy;
    } else {
        for c in 0..dim {
            g[(c, c)] = 1.0 / eval.d[c];
        }
    }
    let chol =
        Cholesky::new(g).ok_or_else(|| Error::Numerical("coefficient precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    let u = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = chol
        .l()
        .tr_solve_lower_triangular(&u)
        .expect("triangular factor is invertible");
    let mut betas = DMatrix::zeros(t, p);
    let mut mus = DMatrix::zeros(t, p);
    for h in 0..t {
        for l in 0..p {
            let beta = mean[h * p + l] + dev[h * p + l];
            let tau = state.taus[(h, l)];
            let pm = hyper.tau0 + tau;
            betas[(h, l)] = beta;
            mus[(h, l)] = (hyper.tau0 * hyper.mu0 + tau * beta) / pm + rng.sample::<f64, _>(StandardNormal) / pm.sqrt();
        }
    }
    state.betas = betas;
    state.mus = mus;
    Ok(())
}

/// One split-merge proposal. `state` must be compacted.
pub fn split_merge_step<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    cache: &CovCache,
    hyper: &Hyperparameters,
    prior: &dyn ClusterPrior,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<SplitMergeOutcome> {
    let n = data.n();
    if n < 2 {
        return Ok(SplitMergeOutcome {
            split: false,
            accepted: false,
        });
    }
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let labels = state.partition.labels().to_vec();
    let (ci, cj) = (labels[i], labels[j]);
    let split = ci == cj;
    let (u, v) = if rng.random::<f64>() < RESCALE_PROB {
        (
            RESCALE_SD * rng.sample::<f64, _>(StandardNormal),
            RESCALE_SD * rng.sample::<f64, _>(StandardNormal),
        )
    } else {
        (0.0, 0.0)
    };
    let current = Scales::of(state);
    let (next, log_jacobian) = current.shifted(u, v, if split { 1.0 } else { -1.0 });
    // launch variances are those of the merged state
    let merged = if split { current } else { next };
    let others: Vec<usize> = (0..n)
        .filter(|&l| l != i && l != j && (labels[l] == ci || labels[l] == cj))
        .collect();
    let surrogate = Surrogate {
        data,
        s2: 1.0 / merged.tau_y + merged.sigma2,
        v0: 1.0 + 1.0 / hyper.tau0,
        mu0: hyper.mu0,
        with_likelihood,
    };
    let (mut sides, mut alloc) = surrogate.launch([i, j], &others, rng);

    let t = state.k_active();
    let p = data.p();
    let mut new_labels = labels.clone();
    let mut new_taus;
    let log_q;
    if split {
        log_q = -surrogate.scan(&mut sides, &mut alloc, &others, None, rng);
        new_labels[j] = t;
        for (pos, &l) in others.iter().enumerate() {
            if alloc[pos] == 1 {
                new_labels[l] = t;
            }
        }
        new_taus = state.taus.clone().insert_row(t, 0.0);
        for l in 0..p {
            new_taus[(t, l)] = fresh_coefficient(hyper, rng)?.1;
        }
    } else {
        let actual: Vec<usize> = others.iter().map(|&l| usize::from(labels[l] == cj)).collect();
        log_q = surrogate.scan(&mut sides, &mut alloc, &others, Some(&actual), rng);
        for l in new_labels.iter_mut() {
            if *l == cj {
                *l = ci;
            }
        }
        new_taus = state.taus.clone();
    }
    let (canon, origin) = canonical_relabel(&new_labels);
    new_taus = DMatrix::from_fn(origin.len(), p, |h, l| new_taus[(origin[h], l)]);
    let part_new = Partition::from_labels(&canon);

    let log_prior = prior.log_partition_prob(part_new.counts(), state.lambda)
        - prior.log_partition_prob(state.partition.counts(), state.lambda);
    if log_prior == f64::NEG_INFINITY {
        return Ok(SplitMergeOutcome { split, accepted: false });
    }
    if !(next.sigma2 > POSITIVE_FLOOR
        && next.tau_y > POSITIVE_FLOOR
        && next.sigma2.is_finite()
        && next.tau_y.is_finite())
    {
        return Ok(SplitMergeOutcome { split, accepted: false });
    }
    let marginal = Marginal::new(data, next, cache, hyper)?;
    let proposed = marginal.evaluate(&canon, &new_taus)?;
    let log_lik = if with_likelihood {
        let before = if u == 0.0 && v == 0.0 {
            marginal.evaluate(&labels, &state.taus)?
        } else {
            Marginal::new(data, current, cache, hyper)?.evaluate(&labels, &state.taus)?
        };
        proposed.log_lik - before.log_lik
    } else {
        0.0
    };
    let log_scales = next.log_prior(hyper) - current.log_prior(hyper) + log_jacobian;
    let log_ratio = log_prior + log_lik + log_q + log_scales;
    let accepted = log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio;
    if accepted {
        state.partition = part_new;
        state.taus = new_taus;
        state.sigma2 = next.sigma2;
        state.tau_y = next.tau_y;
        redraw_coefficients(&marginal, &proposed, state, with_likelihood, rng)?;
        update_random_effects(data, state, cache, with_likelihood, rng)?;
    }
    Ok(SplitMergeOutcome { split, accepted })
}
