use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const JITTER_FACTOR: f64 = 1e-10;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    chol: Cholesky<f64, Dyn>,
    l: DMatrix<f64>,
    log_det: f64,
    jittered: bool,
}

/// Factorizes `cov`. If the first attempt fails the diagonal is raised once by
/// `1e-10 * trace / n`; a second failure is reported with a conditioning summary.
pub fn factorize(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::Input(format!(
            "covariance must be square and non-empty, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "covariance contains non-finite entries; {}",
            conditioning_report(cov)
        )));
    }
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok(CholeskyFactor::from_chol(chol, false));
    }
    let jitter = JITTER_FACTOR * cov.trace() / n as f64;
    let mut bumped = cov.clone();
    for i in 0..n {
        bumped[(i, i)] += jitter;
    }
    match Cholesky::new(bumped) {
        Some(chol) => Ok(CholeskyFactor::from_chol(chol, true)),
        None => Err(Error::Numerical(format!(
            "Cholesky factorization failed after jitter {jitter:e}; {}",
            conditioning_report(cov)
        ))),
    }
}

fn conditioning_report(cov: &DMatrix<f64>) -> String {
    let n = cov.nrows();
    let diag: Vec<f64> = (0..n).map(|i| cov[(i, i)]).collect();
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let asym = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
        .fold(0.0, f64::max);
    format!(
        "n={n}, trace={:.6e}, diag range=[{min:.6e}, {max:.6e}], max asymmetry={asym:.3e}",
        cov.trace()
    )
}

impl CholeskyFactor {
    fn from_chol(chol: Cholesky<f64, Dyn>, jittered: bool) -> Self {
        let l = chol.l();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        CholeskyFactor {
            chol,
            l,
            log_det,
            jittered,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Log-determinant of the factorized matrix.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Whether the diagonal jitter was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `x^T A^{-1} x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let mut y = x.clone();
        self.l.solve_lower_triangular_mut(&mut y);
        y.norm_squared()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `L u`, the correlated image of a standard-normal vector.
    pub fn correlate(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.l * u
    }

    /// Log-density of `N(0, A)` at `x`.
    pub fn centered_logdensity(&self, x: &DVector<f64>) -> f64 {
        let n = x.len() as f64;
        -0.5 * (n * (2.0 * PI).ln() + self.log_det + self.quad_form(x))
    }
}

pub fn mvn_logdensity(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() || cov.nrows() != x.len() {
        return Err(Error::Input(format!(
            "dimension mismatch: x {}, mean {}, cov {}x{}",
            x.len(),
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let factor = factorize(cov)?;
    Ok(factor.centered_logdensity(&(x - mean)))
}

pub fn mvn_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() {
        return Err(Error::Input(format!(
            "dimension mismatch: mean {}, cov {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let factor = factorize(cov)?;
    Ok(mean + factor.correlate(&standard_normal_vector(mean.len(), rng)))
}

pub(crate) fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
