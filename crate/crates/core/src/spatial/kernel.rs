use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::geo::DistanceMatrix;
use crate::error::{Error, Result};

/// The three distance weighting schemes for a spatial correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingScheme {
    Unity,
    Exponential,
    Gaussian,
}

/// Builds `H` from distances with bandwidth `phi`. `phi` is ignored for
/// [`WeightingScheme::Unity`].
pub fn weighting_scheme(kind: WeightingScheme, d: &DistanceMatrix, phi: f64) -> Result<DMatrix<f64>> {
    let n = d.n();
    match kind {
        WeightingScheme::Unity => Ok(DMatrix::identity(n, n)),
        WeightingScheme::Exponential | WeightingScheme::Gaussian => {
            if !(phi > 0.0) || !phi.is_finite() {
                return Err(Error::Parameter(format!("bandwidth must be positive, got {phi}")));
            }
            let form = if kind == WeightingScheme::Exponential {
                KernelForm::Exponential
            } else {
                KernelForm::Gaussian
            };
            Ok(KernelBase::new(d.matrix().clone(), form).evaluate(1.0 / phi))
        }
    }
}

/// Pairwise similarity `exp(-kappa * |z_l - z_l'|)` of one auxiliary covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    w: DMatrix<f64>,
    kappa: f64,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.w
    }
}

pub fn similarity_matrix(z: &[f64], kappa: f64) -> Result<SimilarityMatrix> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!(
            "range parameter must be positive, got {kappa}"
        )));
    }
    let base = KernelBase::from_covariate(z)?;
    Ok(SimilarityMatrix {
        w: base.evaluate(kappa),
        kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelForm {
    /// `exp(-kappa * d)`
    Exponential,
    /// `exp(-(kappa * d)^2)`
    Gaussian,
}

/// A precomputed matrix of nonnegative pairwise separations that can be turned
/// into a unit-diagonal correlation matrix for any range parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBase {
    separation: DMatrix<f64>,
    form: KernelForm,
}

impl KernelBase {
    pub fn new(separation: DMatrix<f64>, form: KernelForm) -> Self {
        KernelBase { separation, form }
    }

    /// Absolute differences of a scalar covariate.
    pub fn from_covariate(z: &[f64]) -> Result<Self> {
        if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite covariate value at site {pos}")));
        }
        let n = z.len();
        let separation = DMatrix::from_fn(n, n, |i, j| (z[i] - z[j]).abs());
        Ok(KernelBase::new(separation, KernelForm::Exponential))
    }

    pub fn n(&self) -> usize {
        self.separation.nrows()
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    pub fn evaluate(&self, kappa: f64) -> DMatrix<f64> {
        let mut out = self.separation.clone();
        self.evaluate_into(kappa, &mut out);
        out
    }

    pub fn evaluate_into(&self, kappa: f64, out: &mut DMatrix<f64>) {
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                let s = kappa * self.separation[(i, j)];
                out[(i, j)] = match self.form {
                    KernelForm::Exponential => (-s).exp(),
                    KernelForm::Gaussian => (-s * s).exp(),
                };
            }
        }
        for i in 0..n {
            out[(i, i)] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::geo::{distance_matrix, Location};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_site_distance(d_km: f64) -> DistanceMatrix {
        // Two points on the equator separated by d_km.
        let lon = (d_km / crate::spatial::EARTH_RADIUS_KM).to_degrees();
        distance_matrix(&[
            Location::new("a", 0.0, 0.0).unwrap(),
            Location::new("b", 0.0, lon).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn unity_is_identity() {
        let d = two_site_distance(10.0);
        assert_eq!(
            weighting_scheme(WeightingScheme::Unity, &d, -1.0).unwrap(),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn exponential_and_gaussian_closed_forms() {
        let d = two_site_distance(4.0);
        let h = weighting_scheme(WeightingScheme::Exponential, &d, 4.0).unwrap();
        assert!((h[(0, 1)] - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(h[(0, 0)], 1.0);

        let d = two_site_distance(2.0);
        let h = weighting_scheme(WeightingScheme::Gaussian, &d, 2.0).unwrap();
        assert!((h[(1, 0)] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn bad_bandwidth() {
        let d = two_site_distance(1.0);
        assert!(weighting_scheme(WeightingScheme::Exponential, &d, 0.0).is_err());
        assert!(weighting_scheme(WeightingScheme::Gaussian, &d, -2.0).is_err());
    }

    #[test]
    fn similarity_closed_forms() {
        let w = similarity_matrix(&[0.3; 4], 2.0).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(4, 4, 1.0));

        let w = similarity_matrix(&[0.0, 1.0], 1.0).unwrap();
        assert!((w.matrix()[(0, 1)] - 0.367879).abs() < 1e-6);

        assert!(similarity_matrix(&[0.0, f64::NAN], 1.0).is_err());
        assert!(similarity_matrix(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn similarity_matches_scalar_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let w = similarity_matrix(&z, 5.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let oracle = f64::exp(-5.0 * (z[i] - z[j]).abs());
                assert!((w.matrix()[(i, j)] - oracle).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn unit_diagonal_bounded_symmetric(z in proptest::collection::vec(-1.0f64..1.0, 1..12),
                                           kappa in 0.01f64..10.0,
                                           gaussian in any::<bool>()) {
            let mut base = KernelBase::from_covariate(&z).unwrap();
            if gaussian {
                base.form = KernelForm::Gaussian;
            }
            let m = base.evaluate(kappa);
            for i in 0..z.len() {
                prop_assert_eq!(m[(i, i)], 1.0);
                for j in 0..z.len() {
                    prop_assert!(m[(i, j)] > 0.0 && m[(i, j)] <= 1.0);
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-14);
                }
            }
        }
    }
}
