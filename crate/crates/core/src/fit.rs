//! Dataset-to-report pipeline shared by the CLI and the simulation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mcmc::{run_chain, ChainConfig, ChainOutput};
use crate::mfm::ClusterPriorRegistry;
use crate::model::{Hyperparameters, SpatialDataset, SpatialModel};
use crate::posterior::{summarize_chain, FitReport};
use crate::spatial::{CovarianceRegistry, GcdScaling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Registered covariance structure name.
    pub covariance: String,
    pub gcd_scaling: GcdScaling,
    /// Whether the `acac` structure includes the distance kernel.
    pub acac_gcd: bool,
    pub hyper: Hyperparameters,
    pub chain: ChainConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            covariance: "acac".to_string(),
            gcd_scaling: GcdScaling::StdDev,
            acac_gcd: true,
            hyper: Hyperparameters::default(),
            chain: ChainConfig::default(),
        }
    }
}

pub fn build_model(data: &SpatialDataset, opts: &FitOptions) -> Result<SpatialModel> {
    let structures = CovarianceRegistry::builtin(opts.acac_gcd);
    let priors = ClusterPriorRegistry::default();
    SpatialModel::for_dataset(
        data,
        opts.hyper.clone(),
        structures.get(&opts.covariance)?,
        opts.gcd_scaling,
        &priors,
    )
}

/// Fits the model and summarizes the chain. The report carries the chain
/// seed; the config hash is left empty.
pub fn fit_dataset(data: &SpatialDataset, opts: &FitOptions) -> Result<(ChainOutput, FitReport)> {
    let model = build_model(data, opts)?;
    let out = run_chain(data, &model, &opts.chain)?;
    let mut report = summarize_chain(&out, data, &model)?;
    report.seed = opts.chain.seed;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureComparison {
    pub structure: String,
    #[serde(with = "crate::posterior::extended_float")]
    pub lpml: f64,
    pub k_hat: usize,
    pub best: bool,
    pub error: Option<String>,
}

/// Fits once per named structure with the same chain settings and flags
/// the highest LPML. Failed fits are reported with `lpml = -inf`.
pub fn compare_covariance_structures(
    data: &SpatialDataset,
    opts: &FitOptions,
    structures: &[String],
) -> Vec<StructureComparison> {
    let mut rows: Vec<StructureComparison> = structures
        .par_iter()
        .map(|name| {
            let mut o = opts.clone();
            o.covariance = name.clone();
            match fit_dataset(data, &o) {
                Ok((_, report)) => StructureComparison {
                    structure: name.clone(),
                    lpml: report.lpml,
                    k_hat: report.k_hat,
                    best: false,
                    error: None,
                },
                Err(e) => {
                    log::error!("structure `{name}` failed: {e}");
                    StructureComparison {
                        structure: name.clone(),
                        lpml: f64::NEG_INFINITY,
                        k_hat: 0,
                        best: false,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.error.is_none() && !r.lpml.is_nan())
        .max_by(|(i, a), (j, b)| a.lpml.total_cmp(&b.lpml).then(j.cmp(i)))
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].best = true;
    }
    rows
}
