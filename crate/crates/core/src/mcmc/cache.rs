use nalgebra::DMatrix;

use crate::error::Result;
use crate::spatial::{factorize, CholeskyFactor, CovarianceModel};

/// Kernel matrices, unit covariance `H` and its factor at the current
/// weights and ranges. The precision `H^{-1}` is formed on demand.
#[derive(Debug, Clone)]
pub struct CovCache {
    pub bases: Vec<DMatrix<f64>>,
    pub h: DMatrix<f64>,
    pub factor: CholeskyFactor,
    precision: Option<DMatrix<f64>>,
}

impl CovCache {
    pub fn new(cov: &CovarianceModel, alphas: &[f64], kappas: &[f64]) -> Result<Self> {
        let bases = cov.bases(kappas);
        let h = cov.unit_covariance(alphas, &bases);
        let factor = factorize(&h)?;
        Ok(CovCache {
            bases,
            h,
            factor,
            precision: None,
        })
    }

    /// Candidate cache with new weights and, optionally, one replaced kernel.
    pub fn propose(
        &self,
        cov: &CovarianceModel,
        alphas: &[f64],
        replaced: Option<(usize, DMatrix<f64>)>,
    ) -> Result<Self> {
        let mut bases = self.bases.clone();
        if let Some((j, b)) = replaced {
            bases[j] = b;
        }
        let h = cov.unit_covariance(alphas, &bases);
        let factor = factorize(&h)?;
        Ok(CovCache {
            bases,
            h,
            factor,
            precision: None,
        })
    }

    pub fn precision(&mut self) -> &DMatrix<f64> {
        if self.precision.is_none() {
            let mut q = self.factor.inverse();
            // symmetrize rounding noise
            let qt = q.transpose();
            q += qt;
            q *= 0.5;
            self.precision = Some(q);
        }
        self.precision.as_ref().expect("just set")
    }
}
