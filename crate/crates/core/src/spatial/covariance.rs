use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on `sum(alphas) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `sigma2 * (alphas[0] * I + sum_j alphas[j] * bases[j - 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub n: usize,
    pub sigma2: f64,
    pub alphas: Vec<f64>,
    pub bases: Vec<DMatrix<f64>>,
}

impl CovarianceSpec {
    pub fn new(n: usize, sigma2: f64, alphas: Vec<f64>, bases: Vec<DMatrix<f64>>) -> Result<Self> {
        let spec = CovarianceSpec {
            n,
            sigma2,
            alphas,
            bases,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.alphas.len() != self.bases.len() + 1 {
            return Err(Error::Input(format!(
                "{} mixing weights for {} base matrices (expected one extra for the identity)",
                self.alphas.len(),
                self.bases.len()
            )));
        }
        validate_simplex(&self.alphas, SIMPLEX_TOL)?;
        let n = self.n;
        for (j, b) in self.bases.iter().enumerate() {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Input(format!(
                    "base matrix {} is {}x{}, expected {n}x{n}",
                    j + 1,
                    b.nrows(),
                    b.ncols()
                )));
            }
            if !is_symmetric(b, 1e-12) {
                return Err(Error::Input(format!("base matrix {} is not symmetric", j + 1)));
            }
        }
        Ok(())
    }
}

pub fn validate_simplex(alphas: &[f64], tol: f64) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Parameter("empty simplex vector".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Parameter(format!("simplex component {a} outside [0, 1]")));
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Parameter(format!("simplex components sum to {sum}, not 1")));
    }
    Ok(())
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Assembles the ACAC covariance after validating the spec.
pub fn acac_covariance(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut out = mix_unit_covariance(spec.n, &spec.alphas, &spec.bases);
    out *= spec.sigma2;
    Ok(out)
}

/// `alphas[0] * I + sum_j alphas[j] * bases[j - 1]` without validation.
pub fn mix_unit_covariance(n: usize, alphas: &[f64], bases: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (a, b) in alphas[1..].iter().zip(bases) {
        if *a != 0.0 {
            out.zip_apply(b, |o, v| *o += a * v);
        }
    }
    for i in 0..n {
        out[(i, i)] += alphas[0];
    }
    out
}
