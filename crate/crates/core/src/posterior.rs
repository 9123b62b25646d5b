//! Posterior summaries: CPO and LPML, modal partition, HPD intervals and the
//! fit report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::mfm::Partition;
use crate::model::{SpatialDataset, SpatialModel};
use crate::stats::{mean, sample_sd};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_HPD_DRAWS: usize = 20;

/// JSON has no infinities; non-finite values are written as strings.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid number `{other}`"))),
            },
        }
    }
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log CPO_i = -log( (1/T) sum_t exp(-logdens[t][i]) )`.
pub fn log_cpo(per_obs_logdens: &[Vec<f64>]) -> Result<Vec<f64>> {
    let t = per_obs_logdens.len();
    if t == 0 {
        return Err(Error::Input("CPO needs at least one draw".into()));
    }
    let n = per_obs_logdens[0].len();
    if per_obs_logdens.iter().any(|row| row.len() != n) {
        return Err(Error::Input("ragged log-density table".into()));
    }
    if per_obs_logdens
        .iter()
        .flatten()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(Error::Input("log-density table contains NaN or +inf".into()));
    }
    let ln_t = (t as f64).ln();
    Ok((0..n)
        .map(|i| {
            let v = -(log_sum_exp(per_obs_logdens.iter().map(|row| -row[i])) - ln_t);
            if v == f64::NEG_INFINITY {
                log::warn!("observation {i} has a zero density draw; its CPO is 0");
            }
            v
        })
        .collect())
}

pub fn cpo_estimate(per_obs_logdens: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(log_cpo(per_obs_logdens)?.into_iter().map(f64::exp).collect())
}

/// `sum_i log CPO_i`.
pub fn lpml(cpo: &[f64]) -> f64 {
    if cpo.iter().any(|&c| c <= 0.0) {
        log::warn!("zero CPO value; LPML is -inf");
        return f64::NEG_INFINITY;
    }
    cpo.iter().map(|c| c.ln()).sum()
}

pub fn lpml_from_log_cpo(log_cpo: &[f64]) -> f64 {
    log_cpo.iter().sum()
}

/// Per-site most frequent label; ties go to the smallest label.
pub fn modal_partition(label_draws: &[Vec<usize>]) -> Result<Vec<usize>> {
    let first = label_draws
        .first()
        .ok_or_else(|| Error::Input("modal partition needs at least one draw".into()))?;
    let n = first.len();
    if label_draws.iter().any(|d| d.len() != n) {
        return Err(Error::Input("label draws have different lengths".into()));
    }
    let kmax = label_draws.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; kmax];
    Ok((0..n)
        .map(|i| {
            counts.iter_mut().for_each(|c| *c = 0);
            for d in label_draws {
                counts[d[i]] += 1;
            }
            let mut best = 0;
            for (l, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = l;
                }
            }
            best
        })
        .collect())
}

/// Relabels `labels` to agree with `reference` by greedily matching the
/// largest overlaps. Unmatched clusters get fresh labels after the
/// reference's.
pub fn align_to_reference(labels: &[usize], reference: &[usize]) -> Vec<usize> {
    let ka = labels.iter().max().map_or(0, |m| m + 1);
    let kr = reference.iter().max().map_or(0, |m| m + 1);
    let mut overlap = vec![vec![0usize; kr]; ka];
    for (&a, &r) in labels.iter().zip(reference) {
        overlap[a][r] += 1;
    }
    let mut map = vec![usize::MAX; ka];
    let mut taken = vec![false; kr];
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for a in 0..ka {
            if map[a] != usize::MAX {
                continue;
            }
            for r in 0..kr {
                if taken[r] || overlap[a][r] == 0 {
                    continue;
                }
                if best.is_none_or(|(_, _, c)| overlap[a][r] > c) {
                    best = Some((a, r, overlap[a][r]));
                }
            }
        }
        match best {
            Some((a, r, _)) => {
                map[a] = r;
                taken[r] = true;
            }
            None => break,
        }
    }
    let mut next = kr;
    for m in map.iter_mut() {
        if *m == usize::MAX {
            *m = next;
            next += 1;
        }
    }
    labels.iter().map(|&a| map[a]).collect()
}

/// Modal partition after iteratively aligning every draw to the current
/// modal estimate. Returns canonical labels.
pub fn aligned_modal_partition(label_draws: &[Vec<usize>]) -> Result<Partition> {
    let mut reference = modal_partition(label_draws)?;
    for _ in 0..20 {
        let aligned: Vec<Vec<usize>> = label_draws.iter().map(|d| align_to_reference(d, &reference)).collect();
        let next = modal_partition(&aligned)?;
        if next == reference {
            break;
        }
        reference = next;
    }
    Ok(Partition::from_labels(&reference))
}

/// Chen-Shao empirical HPD interval: the shortest window holding
/// `ceil(level * T)` sorted draws.
pub fn hpd_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.len() < MIN_HPD_DRAWS {
        return Err(Error::Input(format!(
            "HPD interval needs at least {MIN_HPD_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Parameter(format!("HPD level must be in (0, 1], got {level}")));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("HPD draws must be finite".into()));
    }
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let t = x.len();
    let m = ((level * t as f64).ceil() as usize).clamp(1, t);
    let mut best = (x[0], x[m - 1]);
    for i in 1..=(t - m) {
        let (lo, hi) = (x[i], x[i + m - 1]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub hpd_lower: f64,
    pub hpd_upper: f64,
}

pub fn summarize(draws: &[f64]) -> Result<Summary> {
    let (lo, hi) = hpd_interval(draws, 0.95)?;
    Ok(Summary {
        mean: mean(draws),
        sd: sample_sd(draws),
        hpd_lower: lo,
        hpd_upper: hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSummary {
    pub name: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// One-based cluster label in the modal partition.
    pub cluster: usize,
    pub size: usize,
    pub coefficients: Vec<NamedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub covariance: String,
    pub cluster_prior: String,
    pub n_sites: usize,
    pub n_draws: usize,
    pub site_ids: Vec<String>,
    /// One-based modal cluster of each site.
    pub modal_labels: Vec<usize>,
    pub k_hat: usize,
    /// Draw counts by number of occupied clusters.
    pub k_posterior: BTreeMap<usize, usize>,
    pub coefficient_names: Vec<String>,
    pub beta_summary: Vec<ClusterSummary>,
    /// Posterior mean of each site's coefficient vector.
    pub site_beta_mean: Vec<Vec<f64>>,
    pub alpha_summary: Vec<NamedSummary>,
    pub kappa_summary: Vec<NamedSummary>,
    pub sigma2_summary: Summary,
    pub tau_y_summary: Summary,
    pub lambda_summary: Option<Summary>,
    #[serde(with = "extended_float")]
    pub lpml: f64,
    pub acceptance: BTreeMap<String, f64>,
    pub k_max_hits: usize,
}

pub fn k_posterior(out: &ChainOutput) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for s in &out.states {
        *h.entry(s.k_active()).or_insert(0) += 1;
    }
    h
}

/// Posterior mean of `beta_{z_i}` per site, invariant to label switching.
pub fn site_beta_mean(out: &ChainOutput, p: usize) -> Vec<Vec<f64>> {
    let n = out.states.first().map_or(0, |s| s.partition.n());
    let t = out.states.len() as f64;
    let mut acc = vec![vec![0.0; p]; n];
    for s in &out.states {
        let labels = s.partition.labels();
        for (i, row) in acc.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                *v += s.betas[(labels[i], l)];
            }
        }
    }
    acc.iter_mut().flatten().for_each(|v| *v /= t);
    acc
}

/// Summarizes a chain. `seed` and `config_hash` are left for the caller.
pub fn summarize_chain(out: &ChainOutput, data: &SpatialDataset, model: &SpatialModel) -> Result<FitReport> {
    if out.is_empty() {
        return Err(Error::Input("chain has no retained draws".into()));
    }
    let p = data.p();
    let label_draws: Vec<Vec<usize>> = out.states.iter().map(|s| s.partition.labels().to_vec()).collect();
    let modal = aligned_modal_partition(&label_draws)?;

    let mut beta_summary = Vec::with_capacity(modal.k_active());
    for c in 0..modal.k_active() {
        let members: Vec<usize> = modal.members(c).collect();
        let mut per_coord = vec![Vec::with_capacity(out.len()); p];
        for s in &out.states {
            let mut overlap = vec![0usize; s.k_active()];
            for &i in &members {
                overlap[s.partition.labels()[i]] += 1;
            }
            let mut h = 0;
            for (j, &o) in overlap.iter().enumerate() {
                if o > overlap[h] {
                    h = j;
                }
            }
            for (l, v) in per_coord.iter_mut().enumerate() {
                v.push(s.betas[(h, l)]);
            }
        }
        let coefficients = per_coord
            .iter()
            .zip(&data.x_names)
            .map(|(d, name)| {
                Ok(NamedSummary {
                    name: name.clone(),
                    summary: summarize(d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        beta_summary.push(ClusterSummary {
            cluster: c + 1,
            size: members.len(),
            coefficients,
        });
    }

    let scalar = |f: &dyn Fn(&crate::model::ModelState) -> f64| -> Result<Summary> {
        summarize(&out.states.iter().map(f).collect::<Vec<_>>())
    };
    let mut alpha_names = vec!["identity".to_string()];
    alpha_names.extend(model.cov.kernel_labels().iter().map(|s| s.to_string()));
    let alpha_summary = alpha_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok(NamedSummary {
                name: name.clone(),
                summary: scalar(&|s| s.alphas[j])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kappa_summary = model
        .cov
        .kernel_labels()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok(NamedSummary {
                name: name.to_string(),
                summary: scalar(&|s| s.kappas[j])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda_summary = if model.prior.learns_lambda() {
        Some(scalar(&|s| s.lambda)?)
    } else {
        None
    };

    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        seed: 0,
        config_hash: String::new(),
        covariance: model.cov.name().to_string(),
        cluster_prior: model.prior.name().to_string(),
        n_sites: data.n(),
        n_draws: out.len(),
        site_ids: data.locs.iter().map(|l| l.id.clone()).collect(),
        modal_labels: modal.one_based(),
        k_hat: modal.k_active(),
        k_posterior: k_posterior(out),
        coefficient_names: data.x_names.clone(),
        beta_summary,
        site_beta_mean: site_beta_mean(out, p),
        alpha_summary,
        kappa_summary,
        sigma2_summary: scalar(&|s| s.sigma2)?,
        tau_y_summary: scalar(&|s| s.tau_y)?,
        lambda_summary,
        lpml: lpml_from_log_cpo(&log_cpo(&out.per_obs_logdens)?),
        acceptance: out.acceptance.clone(),
        k_max_hits: out.k_max_hits,
    })
}
