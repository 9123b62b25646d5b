//! Data, parameters and densities of the clustered-coefficient spatial
//! regression model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mfm::{
    log_symmetric_dirichlet, ClusterPrior, ClusterPriorRegistry, ClusterPriorSettings, MixtureWeights, Partition,
};
use crate::spatial::{
    distance_matrix, factorize, validate_simplex, CholeskyFactor, CovarianceModel, CovarianceStructure, GcdScaling,
    KernelInputs, Location,
};

/// Responses, covariates and coordinates for `n` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub locs: Vec<Location>,
    pub y: Vec<f64>,
    /// `n x p` design matrix, intercept column first when `with_intercept`.
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_aux: Vec<Vec<f64>>,
    pub z_names: Vec<String>,
    pub with_intercept: bool,
}

impl SpatialDataset {
    /// Builds a dataset from regression covariate columns, optionally
    /// prepending an intercept column named `intercept`.
    pub fn new(
        locs: Vec<Location>,
        y: Vec<f64>,
        x_columns: Vec<Vec<f64>>,
        x_names: Vec<String>,
        z_aux: Vec<Vec<f64>>,
        z_names: Vec<String>,
        with_intercept: bool,
    ) -> Result<Self> {
        let n = y.len();
        let mut cols = Vec::with_capacity(x_columns.len() + 1);
        let mut names = Vec::with_capacity(x_columns.len() + 1);
        if with_intercept {
            cols.push(vec![1.0; n]);
            names.push("intercept".to_string());
        }
        if x_names.len() != x_columns.len() {
            return Err(Error::Input(format!(
                "{} covariate names for {} covariate columns",
                x_names.len(),
                x_columns.len()
            )));
        }
        for (name, col) in x_names.into_iter().zip(x_columns) {
            if col.len() != n {
                return Err(Error::Input(format!(
                    "covariate `{name}` has {} values for {n} sites",
                    col.len()
                )));
            }
            cols.push(col);
            names.push(name);
        }
        let p = cols.len();
        let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        let ds = SpatialDataset {
            locs,
            y,
            x,
            x_names: names,
            z_aux,
            z_names,
            with_intercept,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Input("dataset has no sites".into()));
        }
        if self.locs.len() != n || self.x.nrows() != n {
            return Err(Error::Input(format!(
                "inconsistent site counts: {} responses, {} locations, {} design rows",
                n,
                self.locs.len(),
                self.x.nrows()
            )));
        }
        if self.p() == 0 {
            return Err(Error::Input(
                "at least one regression covariate or an intercept is required".into(),
            ));
        }
        if self.x_names.len() != self.p() || self.z_names.len() != self.z_aux.len() {
            return Err(Error::Input("column names do not match the number of columns".into()));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite response at site {}", self.locs[i].id)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite regression covariate".into()));
        }
        for (name, z) in self.z_names.iter().zip(&self.z_aux) {
            if z.len() != n {
                return Err(Error::Input(format!(
                    "auxiliary covariate `{name}` has {} values for {n} sites",
                    z.len()
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "non-finite value in auxiliary covariate `{name}`"
                )));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for loc in &self.locs {
            loc.validate()?;
            if !ids.insert(loc.id.as_str()) {
                return Err(Error::Input(format!("duplicate site id `{}`", loc.id)));
            }
        }
        Ok(())
    }

    /// Regression covariate columns without the intercept.
    pub fn covariate_columns(&self) -> Vec<Vec<f64>> {
        let start = usize::from(self.with_intercept);
        (start..self.p())
            .map(|j| self.x.column(j).iter().copied().collect())
            .collect()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.x_names[usize::from(self.with_intercept)..]
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Gamma shape and rate for `tau_y`.
    pub a1: f64,
    pub b1: f64,
    /// Inverse-gamma shape and scale for `sigma^2`.
    pub a2: f64,
    pub b2: f64,
    /// Normal prior on cluster hyper-means.
    pub mu0: f64,
    pub tau0: f64,
    /// Gamma shape and rate for cluster hyper-precisions.
    pub a_tau: f64,
    pub b_tau: f64,
    /// Symmetric Dirichlet concentration for the covariance weights.
    pub nu: f64,
    /// Gamma shape and rate for `1 / kappa_j`.
    pub kappa_shape: f64,
    pub kappa_rate: f64,
    /// Log-normal location and scale for the Poisson rate.
    pub lambda_meanlog: f64,
    pub lambda_sdlog: f64,
    /// Registered name of the clustering prior.
    pub cluster_prior: String,
    pub cluster: ClusterPriorSettings,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            a1: 1.0,
            b1: 1.0,
            a2: 1.0,
            b2: 1.0,
            mu0: 0.0,
            tau0: 1.0,
            a_tau: 1.0,
            b_tau: 1.0,
            nu: 1.0,
            kappa_shape: 1.0,
            kappa_rate: 1.0,
            lambda_meanlog: 0.0,
            lambda_sdlog: 1.0,
            cluster_prior: "mfm".to_string(),
            cluster: ClusterPriorSettings::default(),
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("tau0", self.tau0),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("nu", self.nu),
            ("kappa_shape", self.kappa_shape),
            ("kappa_rate", self.kappa_rate),
            ("lambda_sdlog", self.lambda_sdlog),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "hyperparameter `{name}` must be positive and finite, got {v}"
                )));
            }
        }
        if !self.mu0.is_finite() || !self.lambda_meanlog.is_finite() {
            return Err(Error::Parameter("mu0 and lambda_meanlog must be finite".into()));
        }
        Ok(())
    }
}

/// Everything except the data needed to evaluate and sample the model.
#[derive(Debug)]
pub struct SpatialModel {
    pub hyper: Hyperparameters,
    pub cov: CovarianceModel,
    pub prior: Box<dyn ClusterPrior>,
}

impl SpatialModel {
    pub fn new(hyper: Hyperparameters, cov: CovarianceModel, prior: Box<dyn ClusterPrior>) -> Result<Self> {
        hyper.validate()?;
        Ok(SpatialModel { hyper, cov, prior })
    }

    /// Builds the covariance template from the dataset's coordinates and
    /// auxiliary covariates, and the clustering prior from the registry.
    pub fn for_dataset(
        data: &SpatialDataset,
        hyper: Hyperparameters,
        structure: &dyn CovarianceStructure,
        scaling: GcdScaling,
        priors: &ClusterPriorRegistry,
    ) -> Result<Self> {
        data.validate()?;
        let distances = distance_matrix(&data.locs)?.scaled(scaling);
        let cov = structure.build(&KernelInputs {
            aux: &data.z_aux,
            aux_names: &data.z_names,
            distances: &distances,
        })?;
        if cov.n() != data.n() {
            return Err(Error::Input(format!(
                "covariance has dimension {}, dataset has {} sites",
                cov.n(),
                data.n()
            )));
        }
        let prior = priors.build(&hyper.cluster_prior, &hyper.cluster)?;
        Self::new(hyper, cov, prior)
    }
}

/// One full state of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub partition: Partition,
    pub weights: MixtureWeights,
    /// `k_active x p`.
    pub betas: DMatrix<f64>,
    pub mus: DMatrix<f64>,
    pub taus: DMatrix<f64>,
    pub w: DVector<f64>,
    pub tau_y: f64,
    pub sigma2: f64,
    pub alphas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub lambda: f64,
}

impl ModelState {
    pub fn k_active(&self) -> usize {
        self.partition.k_active()
    }

    /// Components including empty ones.
    pub fn k(&self) -> usize {
        self.weights.k()
    }

    /// Coefficient vector of site `i`.
    pub fn site_beta(&self, i: usize) -> Vec<f64> {
        self.betas.row(self.partition.labels()[i]).iter().copied().collect()
    }

    /// Linear predictor `x_i beta_{z_i}` for every site.
    pub fn fitted_mean(&self, data: &SpatialDataset) -> DVector<f64> {
        let labels = self.partition.labels();
        DVector::from_fn(data.n(), |i, _| {
            let h = labels[i];
            (0..data.p()).map(|l| data.x[(i, l)] * self.betas[(h, l)]).sum()
        })
    }

    pub fn validate(&self, data: &SpatialDataset, cov: &CovarianceModel) -> Result<()> {
        let n = data.n();
        let p = data.p();
        let k = self.k_active();
        if self.partition.n() != n || self.w.len() != n {
            return Err(Error::Input(format!(
                "state sized for {} sites (w has {}), dataset has {n}",
                self.partition.n(),
                self.w.len()
            )));
        }
        for (name, m) in [("betas", &self.betas), ("mus", &self.mus), ("taus", &self.taus)] {
            if m.nrows() != k || m.ncols() != p {
                return Err(Error::Input(format!(
                    "{name} is {}x{}, expected {k}x{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("{name} has non-finite entries")));
            }
        }
        if self.taus.iter().any(|&t| t <= 0.0) {
            return Err(Error::Parameter("cluster precisions must be positive".into()));
        }
        if self.weights.k() < k {
            return Err(Error::Parameter(format!(
                "{} weights for {k} occupied clusters",
                self.weights.k()
            )));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("random effects contain non-finite values".into()));
        }
        for (name, v) in [("tau_y", self.tau_y), ("sigma2", self.sigma2), ("lambda", self.lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.alphas.len() != cov.alpha_dim() || self.kappas.len() != cov.n_kappas() {
            return Err(Error::Input(format!(
                "state has {} weights and {} ranges, covariance needs {} and {}",
                self.alphas.len(),
                self.kappas.len(),
                cov.alpha_dim(),
                cov.n_kappas()
            )));
        }
        validate_simplex(&self.alphas, 1e-9)?;
        if self.kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::Parameter("kernel ranges must be positive and finite".into()));
        }
        Ok(())
    }
}

/// `r_i = y_i - x_i beta_{z_i} - w_i`.
pub fn residuals(data: &SpatialDataset, state: &ModelState) -> DVector<f64> {
    let y = DVector::from_column_slice(&data.y);
    y - state.fitted_mean(data) - &state.w
}

pub fn normal_logpdf(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision.ln() - (2.0 * PI).ln()) - 0.5 * precision * (x - mean) * (x - mean)
}

/// `log N(y_i | x_i beta_{z_i} + w_i, 1 / tau_y)` for each site.
pub fn per_observation_logdens(data: &SpatialDataset, state: &ModelState) -> Vec<f64> {
    residuals(data, state)
        .iter()
        .map(|&r| normal_logpdf(r, 0.0, state.tau_y))
        .collect()
}

pub fn log_likelihood(data: &SpatialDataset, state: &ModelState) -> Result<f64> {
    if state.partition.n() != data.n() || state.w.len() != data.n() || state.betas.ncols() != data.p() {
        return Err(Error::Input(format!(
            "state does not match dataset of {} sites and {} covariates",
            data.n(),
            data.p()
        )));
    }
    Ok(per_observation_logdens(data, state).iter().sum())
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn inverse_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn lognormal_logpdf(x: f64, meanlog: f64, sdlog: f64) -> f64 {
    let z = (x.ln() - meanlog) / sdlog;
    -x.ln() - sdlog.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
}

/// Log density of `kappa` when `1 / kappa ~ Gamma(shape, rate)`.
pub fn kappa_logpdf(kappa: f64, shape: f64, rate: f64) -> f64 {
    gamma_logpdf(1.0 / kappa, shape, rate) - 2.0 * kappa.ln()
}

/// Factor-by-factor breakdown of the log prior.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LogPriorTerms {
    pub w: f64,
    pub betas: f64,
    pub mus: f64,
    pub taus: f64,
    pub tau_y: f64,
    pub sigma2: f64,
    pub alphas: f64,
    pub kappas: f64,
    pub lambda: f64,
    pub weights: f64,
    pub labels: f64,
}

impl LogPriorTerms {
    pub fn total(&self) -> f64 {
        self.w
            + self.betas
            + self.mus
            + self.taus
            + self.tau_y
            + self.sigma2
            + self.alphas
            + self.kappas
            + self.lambda
            + self.weights
            + self.labels
    }
}

/// `log N(w | 0, sigma^2 H)` given a factor of `H`.
pub fn random_effect_logdens(w: &DVector<f64>, sigma2: f64, h_factor: &CholeskyFactor) -> f64 {
    let n = w.len() as f64;
    -0.5 * (n * (2.0 * PI * sigma2).ln() + h_factor.log_det() + h_factor.quad_form(w) / sigma2)
}

/// Log prior of `state`, factorizing the unit covariance at the state's
/// weights and ranges.
pub fn log_prior(model: &SpatialModel, state: &ModelState) -> Result<LogPriorTerms> {
    let bases = model.cov.bases(&state.kappas);
    let h = model.cov.unit_covariance(&state.alphas, &bases);
    let factor = factorize(&h)?;
    log_prior_with_factor(model, state, &factor)
}

pub fn log_prior_with_factor(
    model: &SpatialModel,
    state: &ModelState,
    h_factor: &CholeskyFactor,
) -> Result<LogPriorTerms> {
    let hp = &model.hyper;
    if h_factor.dim() != state.w.len() {
        return Err(Error::Input("covariance factor does not match random effects".into()));
    }
    let mut t = LogPriorTerms {
        w: random_effect_logdens(&state.w, state.sigma2, h_factor),
        ..Default::default()
    };
    for h in 0..state.k_active() {
        for l in 0..state.betas.ncols() {
            let (b, m, tau) = (state.betas[(h, l)], state.mus[(h, l)], state.taus[(h, l)]);
            t.betas += normal_logpdf(b, m, tau);
            t.mus += normal_logpdf(m, hp.mu0, hp.tau0);
            t.taus += gamma_logpdf(tau, hp.a_tau, hp.b_tau);
        }
    }
    t.tau_y = gamma_logpdf(state.tau_y, hp.a1, hp.b1);
    t.sigma2 = inverse_gamma_logpdf(state.sigma2, hp.a2, hp.b2);
    if model.cov.alphas_free() {
        t.alphas = log_symmetric_dirichlet(&state.alphas, hp.nu);
    }
    t.kappas = state
        .kappas
        .iter()
        .map(|&k| kappa_logpdf(k, hp.kappa_shape, hp.kappa_rate))
        .sum();
    if model.prior.learns_lambda() {
        t.lambda = lognormal_logpdf(state.lambda, hp.lambda_meanlog, hp.lambda_sdlog);
    }
    t.weights = model.prior.log_prior(&state.weights, state.lambda);
    let pi = state.weights.as_slice();
    t.labels = state.partition.labels().iter().map(|&h| pi[h].ln()).sum();
    Ok(t)
}
