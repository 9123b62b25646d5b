use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cache::CovCache;
use super::updates::fresh_coefficient;
use crate::error::{Error, Result};
use crate::mfm::{canonical_relabel, sample_log_categorical, MixtureWeights, Partition};
use crate::model::{normal_logpdf, Hyperparameters, ModelState, SpatialDataset};

/// How cluster labels are resampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelUpdate {
    /// `z_i` given `w_i`: `P(z_i = h) ~ pi_h N(y_i | x_i beta_h + w_i, 1/tau_y)`.
    Conditional,
    /// `(z_i, w_i)` jointly: `z_i` with `w_i` integrated against its
    /// conditional given the other effects, then `w_i` given `z_i`.
    #[default]
    Blocked,
}

/// Resamples every label over the current `k` slots (empty slots receive
/// coefficients drawn from the base prior), then compacts and relabels.
pub fn update_labels<R: Rng + ?Sized>(
    data: &SpatialDataset,
    state: &mut ModelState,
    cache: &mut CovCache,
    hyper: &Hyperparameters,
    mode: LabelUpdate,
    with_likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    let n = data.n();
    let p = data.p();
    let k = state.k();
    let ka = state.k_active();
    let mut betas = DMatrix::<f64>::zeros(k, p);
    let mut mus = DMatrix::<f64>::zeros(k, p);
    let mut taus = DMatrix::<f64>::zeros(k, p);
    for h in 0..k {
        for l in 0..p {
            if h < ka {
                betas[(h, l)] = state.betas[(h, l)];
                mus[(h, l)] = state.mus[(h, l)];
                taus[(h, l)] = state.taus[(h, l)];
            } else {
                let (m, t, b) = fresh_coefficient(hyper, rng)?;
                mus[(h, l)] = m;
                taus[(h, l)] = t;
                betas[(h, l)] = b;
            }
        }
    }
    let fitted = &data.x * betas.transpose(); // n x k
    let log_pi: Vec<f64> = state.weights.as_slice().iter().map(|p| p.ln()).collect();
    let mut raw = vec![0usize; n];
    let mut logs = vec![0.0; k];

    match mode {
        LabelUpdate::Conditional => {
            for i in 0..n {
                for h in 0..k {
                    logs[h] = log_pi[h];
                    if with_likelihood {
                        logs[h] += normal_logpdf(data.y[i], fitted[(i, h)] + state.w[i], state.tau_y);
                    }
                }
                raw[i] = sample_log_categorical(&logs, rng)?;
            }
        }
        LabelUpdate::Blocked => {
            let sigma2 = state.sigma2;
            let q = cache.precision();
            let mut qw = q * &state.w;
            for i in 0..n {
                let qii = q[(i, i)];
                if !(qii > 0.0 && qii.is_finite()) {
                    return Err(Error::Numerical(format!("precision diagonal at site {i} is {qii}")));
                }
                let m = state.w[i] - qw[i] / qii;
                let v = sigma2 / qii;
                for h in 0..k {
                    logs[h] = log_pi[h];
                    if with_likelihood {
                        let var = 1.0 / state.tau_y + v;
                        logs[h] += normal_logpdf(data.y[i], fitted[(i, h)] + m, 1.0 / var);
                    }
                }
                let h = sample_log_categorical(&logs, rng)?;
                raw[i] = h;
                let z: f64 = rng.sample(StandardNormal);
                let new = if with_likelihood {
                    let prec = 1.0 / v + state.tau_y;
                    (m / v + state.tau_y * (data.y[i] - fitted[(i, h)])) / prec + z / prec.sqrt()
                } else {
                    m + z * v.sqrt()
                };
                let delta = new - state.w[i];
                if delta != 0.0 {
                    qw.axpy(delta, &q.column(i), 1.0);
                    state.w[i] = new;
                }
            }
        }
    }

    let (labels, origin) = canonical_relabel(&raw);
    let t = origin.len();
    state.betas = DMatrix::from_fn(t, p, |h, l| betas[(origin[h], l)]);
    state.mus = DMatrix::from_fn(t, p, |h, l| mus[(origin[h], l)]);
    state.taus = DMatrix::from_fn(t, p, |h, l| taus[(origin[h], l)]);
    let pi = state.weights.as_slice();
    let mut reordered: Vec<f64> = origin.iter().map(|&h| pi[h]).collect();
    reordered.extend((0..k).filter(|h| !origin.contains(h)).map(|h| pi[h]));
    let s: f64 = reordered.iter().sum();
    reordered.iter_mut().for_each(|v| *v /= s);
    state.weights = MixtureWeights::new(reordered)?;
    state.partition = Partition::from_labels(&labels);
    Ok(())
}
