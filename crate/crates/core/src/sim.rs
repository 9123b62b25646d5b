//! Synthetic data for the three generating models and two cluster designs,
//! replicate runs and clustering/estimation metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_dataset, FitOptions};
use crate::mfm::Partition;
use crate::model::SpatialDataset;
use crate::spatial::{distance_matrix, factorize, similarity_matrix, GcdScaling, KernelBase, KernelForm, Location};

pub const N_SITES: usize = 159;
/// Latitude and longitude bounds of the synthetic sites.
pub const LAT_RANGE: (f64, f64) = (30.36, 35.0);
pub const LON_RANGE: (f64, f64) = (-85.6, -80.84);
pub const SITES_SEED: u64 = 1732;

pub const TRUE_BETAS: [[f64; 3]; 3] = [[4.0, 1.0, -2.0], [1.0, 1.0, 0.0], [1.0, -2.0, -1.0]];
pub const NOISE_SD: f64 = 0.1;
pub const W_SCALE: f64 = 0.25;
pub const GCD_RANGE: f64 = 0.25;

/// Cluster sizes per design, in longitude order.
pub fn design_sizes(design: u8) -> Result<[usize; 3]> {
    match design {
        1 => Ok([51, 49, 59]),
        2 => Ok([26, 44, 89]),
        d => Err(Error::Config(format!("cluster design must be 1 or 2, got {d}"))),
    }
}

/// `n` sites drawn uniformly in the bounding box, named `site001`...
pub fn synthetic_sites(n: usize, seed: u64) -> Vec<Location> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lat = rng.random_range(LAT_RANGE.0..LAT_RANGE.1);
            let lon = rng.random_range(LON_RANGE.0..LON_RANGE.1);
            Location {
                id: format!("site{:03}", i + 1),
                lat,
                lon,
            }
        })
        .collect()
}

/// Contiguous blocks of the given sizes after sorting sites west to east.
pub fn longitude_blocks(locs: &[Location], sizes: &[usize]) -> Result<Vec<usize>> {
    if sizes.iter().sum::<usize>() != locs.len() {
        return Err(Error::Input(format!(
            "cluster sizes sum to {}, but there are {} sites",
            sizes.iter().sum::<usize>(),
            locs.len()
        )));
    }
    let mut order: Vec<usize> = (0..locs.len()).collect();
    order.sort_by(|&a, &b| locs[a].lon.total_cmp(&locs[b].lon).then(a.cmp(&b)));
    let mut labels = vec![0; locs.len()];
    let mut pos = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for &i in &order[pos..pos + size] {
            labels[i] = c;
        }
        pos += size;
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    /// Zero-based true cluster of each site.
    pub labels_true: Vec<usize>,
    pub betas_true: Vec<Vec<f64>>,
    pub model: u8,
    pub noise_sd: f64,
    pub gcd_scaling: GcdScaling,
    /// Similarity ranges for the two auxiliary covariates (model 3).
    pub kappas_true: [f64; 2],
}

impl SimDesign {
    pub fn new(design: u8, model: u8, locs: &[Location]) -> Result<Self> {
        if !(1..=3).contains(&model) {
            return Err(Error::Config(format!(
                "generating model must be 1, 2 or 3, got {model}"
            )));
        }
        Ok(SimDesign {
            labels_true: longitude_blocks(locs, &design_sizes(design)?)?,
            betas_true: TRUE_BETAS.iter().map(|b| b.to_vec()).collect(),
            model,
            noise_sd: NOISE_SD,
            gcd_scaling: GcdScaling::StdDev,
            kappas_true: [5.0, 3.0],
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.labels_true.len() != n {
            return Err(Error::Input(format!(
                "{} true labels for {n} sites",
                self.labels_true.len()
            )));
        }
        if !(1..=3).contains(&self.model) {
            return Err(Error::Config(format!(
                "generating model must be 1, 2 or 3, got {}",
                self.model
            )));
        }
        let k = self.betas_true.len();
        if self.labels_true.iter().any(|&l| l >= k) {
            return Err(Error::Input("true label without a coefficient vector".into()));
        }
        for c in 0..k {
            if !self.labels_true.contains(&c) {
                return Err(Error::Input(format!("true cluster {} is empty", c + 1)));
            }
        }
        if self.betas_true.iter().any(|b| b.len() != 3) {
            return Err(Error::Input("true coefficient vectors must have three entries".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Parameter("noise sd must be non-negative".into()));
        }
        Ok(())
    }

    /// Covariance of `w`, or `None` for model 1.
    pub fn w_covariance(&self, locs: &[Location], z: &[Vec<f64>]) -> Result<Option<DMatrix<f64>>> {
        let n = locs.len();
        if self.model == 1 {
            return Ok(None);
        }
        let d = distance_matrix(locs)?.scaled(self.gcd_scaling);
        let gcd = KernelBase::new(d.matrix().clone(), KernelForm::Exponential).evaluate(GCD_RANGE);
        let mut h = DMatrix::identity(n, n);
        if self.model == 2 {
            h *= 0.96;
            h += gcd * 0.04;
        } else {
            h *= 0.81;
            h += gcd * 0.04;
            h += similarity_matrix(&z[0], self.kappas_true[0])?.into_matrix() * 0.05;
            h += similarity_matrix(&z[1], self.kappas_true[1])?.into_matrix() * 0.1;
        }
        Ok(Some(h * W_SCALE))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub labels: Partition,
    /// `n x 3` per-site true coefficients.
    pub site_betas: Vec<Vec<f64>>,
    pub w: Vec<f64>,
}

/// Draws covariates, random effects and responses for one replicate.
pub fn generate_dataset<R: Rng + ?Sized>(
    design: &SimDesign,
    locs: &[Location],
    rng: &mut R,
) -> Result<(SpatialDataset, SimTruth)> {
    let n = locs.len();
    design.validate(n)?;
    let unif = |rng: &mut R| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>()).collect() };
    let x: Vec<Vec<f64>> = (0..3).map(|_| unif(rng)).collect();
    let z: Vec<Vec<f64>> = (0..2).map(|_| unif(rng)).collect();
    let w = match design.w_covariance(locs, &z)? {
        None => DVector::zeros(n),
        Some(cov) => {
            let f = factorize(&cov)?;
            f.correlate(&DVector::from_fn(n, |_, _| rng.sample(StandardNormal)))
        }
    };
    let noise = Normal::new(0.0, design.noise_sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let site_betas: Vec<Vec<f64>> = design
        .labels_true
        .iter()
        .map(|&c| design.betas_true[c].clone())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mean: f64 = (0..3).map(|l| x[l][i] * site_betas[i][l]).sum();
            mean + w[i] + rng.sample(noise)
        })
        .collect();
    let data = SpatialDataset::new(
        locs.to_vec(),
        y,
        x,
        vec!["x1".into(), "x2".into(), "x3".into()],
        z,
        vec!["z1".into(), "z2".into()],
        false,
    )?;
    Ok((
        data,
        SimTruth {
            labels: Partition::from_labels(&design.labels_true),
            site_betas,
            w: w.iter().copied().collect(),
        },
    ))
}

/// Fraction of site pairs on which two partitions agree.
pub fn rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    a.check_same_size(b)?;
    let n = a.n();
    if n < 2 {
        return Err(Error::Input("Rand index needs at least two sites".into()));
    }
    let pairs = |m: usize| (m * m.saturating_sub(1) / 2) as f64;
    let mut table = vec![vec![0usize; b.k_active()]; a.k_active()];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        table[la][lb] += 1;
    }
    let both: f64 = table.iter().flatten().map(|&m| pairs(m)).sum();
    let in_a: f64 = a.counts().iter().map(|&m| pairs(m)).sum();
    let in_b: f64 = b.counts().iter().map(|&m| pairs(m)).sum();
    let total = pairs(n);
    Ok((total + 2.0 * both - in_a - in_b) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMetrics {
    pub mab: f64,
    pub msd: f64,
    pub mmse: f64,
}

/// MAB, MSD and MMSE per coordinate. `beta_hats` is replicates x sites x
/// coordinates, `beta_true` is sites x coordinates.
pub fn estimation_metrics(beta_hats: &[Vec<Vec<f64>>], beta_true: &[Vec<f64>]) -> Result<Vec<CoordinateMetrics>> {
    let r = beta_hats.len();
    if r < 2 {
        return Err(Error::Input(format!(
            "estimation metrics need at least two replicates, got {r}"
        )));
    }
    let n = beta_true.len();
    let p = beta_true.first().map_or(0, |b| b.len());
    if beta_hats
        .iter()
        .any(|rep| rep.len() != n || rep.iter().any(|b| b.len() != p))
    {
        return Err(Error::Input("estimates and truth have different shapes".into()));
    }
    Ok((0..p)
        .map(|l| {
            let (mut mab, mut msd, mut mmse) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let est: Vec<f64> = beta_hats.iter().map(|rep| rep[i][l]).collect();
                let truth = beta_true[i][l];
                mab += est.iter().map(|e| (e - truth).abs()).sum::<f64>() / r as f64;
                mmse += est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r as f64;
                msd += crate::stats::sample_sd(&est);
            }
            CoordinateMetrics {
                mab: mab / n as f64,
                msd: msd / n as f64,
                mmse: mmse / n as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub rep_id: usize,
    pub seed: u64,
    #[serde(with = "crate::posterior::extended_float")]
    pub ri: f64,
    pub k_hat: usize,
    #[serde(with = "crate::posterior::extended_float")]
    pub lpml: f64,
    /// Sites x coordinates posterior means.
    pub beta_hat: Vec<Vec<f64>>,
    /// Wall-clock seconds; not written to result files.
    #[serde(skip)]
    pub seconds: f64,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Counts of `k_hat` over successful replicates.
pub fn k_histogram(results: &[ReplicateResult]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for r in results.iter().filter(|r| !r.failed()) {
        *h.entry(r.k_hat).or_insert(0) += 1;
    }
    h
}

/// Random stream of replicate `rep_id` under `master_seed`.
pub fn replicate_rng(master_seed: u64, rep_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep_id as u64 + 1);
    rng
}

/// Generates, fits and scores one replicate.
pub fn run_replicate(
    design: &SimDesign,
    locs: &[Location],
    opts: &FitOptions,
    master_seed: u64,
    rep_id: usize,
) -> ReplicateResult {
    let start = Instant::now();
    let mut rng = replicate_rng(master_seed, rep_id);
    let seed = rng.next_u64();
    let outcome = (|| -> Result<(f64, usize, f64, Vec<Vec<f64>>)> {
        let (data, truth) = generate_dataset(design, locs, &mut rng)?;
        let mut o = opts.clone();
        o.chain.seed = seed;
        let (_, report) = fit_dataset(&data, &o)?;
        let modal = Partition::from_labels(&report.modal_labels);
        Ok((
            rand_index(&modal, &truth.labels)?,
            report.k_hat,
            report.lpml,
            report.site_beta_mean,
        ))
    })();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((ri, k_hat, lpml, beta_hat)) => ReplicateResult {
            rep_id,
            seed,
            ri,
            k_hat,
            lpml,
            beta_hat,
            seconds,
            error: None,
        },
        Err(e) => {
            log::error!("replicate {rep_id} failed: {e}");
            ReplicateResult {
                rep_id,
                seed,
                ri: f64::NAN,
                k_hat: 0,
                lpml: f64::NAN,
                beta_hat: Vec::new(),
                seconds,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs `n_reps` replicates in parallel; results are ordered by `rep_id`.
pub fn run_replicates(
    design: &SimDesign,
    locs: &[Location],
    opts: &FitOptions,
    n_reps: usize,
    master_seed: u64,
) -> Vec<ReplicateResult> {
    (0..n_reps)
        .into_par_iter()
        .map(|r| run_replicate(design, locs, opts, master_seed, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub design: u8,
    pub model: u8,
    pub n_reps: usize,
    pub n_failed: usize,
    #[serde(with = "crate::posterior::extended_float")]
    pub mean_ri: f64,
    pub k_histogram: BTreeMap<usize, usize>,
    /// Per coordinate; absent with fewer than two successful replicates.
    pub metrics: Option<Vec<CoordinateMetrics>>,
}

pub fn summarize_replicates(design_id: u8, design: &SimDesign, results: &[ReplicateResult]) -> Result<SimSummary> {
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| !r.failed()).collect();
    let truth: Vec<Vec<f64>> = design
        .labels_true
        .iter()
        .map(|&c| design.betas_true[c].clone())
        .collect();
    let metrics = if ok.len() >= 2 {
        let hats: Vec<Vec<Vec<f64>>> = ok.iter().map(|r| r.beta_hat.clone()).collect();
        Some(estimation_metrics(&hats, &truth)?)
    } else {
        None
    };
    Ok(SimSummary {
        design: design_id,
        model: design.model,
        n_reps: results.len(),
        n_failed: results.len() - ok.len(),
        mean_ri: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| r.ri).sum::<f64>() / ok.len() as f64
        },
        k_histogram: k_histogram(results),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_ri(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn rand_index_cases() {
        let a = Partition::from_labels(&[0, 0, 1, 1]);
        let b = Partition::from_labels(&[0, 1, 0, 1]);
        assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
        assert!((rand_index(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!(rand_index(&Partition::single_cluster(1), &Partition::single_cluster(1)).is_err());
        assert!(rand_index(&a, &Partition::single_cluster(3)).is_err());
    }

    proptest! {
        #[test]
        fn rand_index_symmetric_and_matches_pairs(a in proptest::collection::vec(0usize..4, 2..25), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..4)).collect();
            let (pa, pb) = (Partition::from_labels(&a), Partition::from_labels(&b));
            let ri = rand_index(&pa, &pb).unwrap();
            prop_assert_eq!(ri, rand_index(&pb, &pa).unwrap());
            prop_assert!((ri - brute_force_ri(&a, &b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ri));
        }

        #[test]
        fn jensen_and_permutation_invariance(errs in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 4), 2..6)) {
            let truth = vec![vec![1.0]; 4];
            let hats: Vec<Vec<Vec<f64>>> = errs.iter().map(|rep| rep.iter().map(|e| vec![1.0 + e]).collect()).collect();
            let m = estimation_metrics(&hats, &truth).unwrap()[0];
            prop_assert!(m.mmse >= m.mab * m.mab - 1e-12);
            let mut rev = hats.clone();
            rev.reverse();
            let m2 = estimation_metrics(&rev, &truth).unwrap()[0];
            prop_assert!((m.mab - m2.mab).abs() < 1e-12 && (m.msd - m2.msd).abs() < 1e-12 && (m.mmse - m2.mmse).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_hand_values() {
        let truth = vec![vec![2.0], vec![0.0]];
        let exact = vec![truth.clone(), truth.clone()];
        let m = estimation_metrics(&exact, &truth).unwrap()[0];
        assert_eq!((m.mab, m.msd, m.mmse), (0.0, 0.0, 0.0));
        // one site, errors +1 and -1
        let truth = vec![vec![0.0]];
        let hats = vec![vec![vec![1.0]], vec![vec![-1.0]]];
        let m = estimation_metrics(&hats, &truth).unwrap()[0];
        assert!((m.mab - 1.0).abs() < 1e-15);
        assert!((m.msd - 2f64.sqrt()).abs() < 1e-15);
        assert!((m.mmse - 1.0).abs() < 1e-15);
        assert!(estimation_metrics(&hats[..1], &truth).is_err());
    }

    #[test]
    fn histogram_counts() {
        let mk = |k| ReplicateResult {
            rep_id: 0,
            seed: 0,
            ri: 1.0,
            k_hat: k,
            lpml: 0.0,
            beta_hat: vec![],
            seconds: 0.0,
            error: None,
        };
        let all3 = vec![mk(3), mk(3)];
        assert_eq!(k_histogram(&all3), BTreeMap::from([(3, 2)]));
        let mixed = vec![mk(3), mk(4), mk(3)];
        let shuffled = vec![mk(4), mk(3), mk(3)];
        assert_eq!(k_histogram(&mixed), BTreeMap::from([(3, 2), (4, 1)]));
        assert_eq!(k_histogram(&mixed), k_histogram(&shuffled));
    }

    #[test]
    fn designs_have_expected_sizes_and_contiguity() {
        let locs = synthetic_sites(N_SITES, SITES_SEED);
        for (d, sizes) in [(1u8, [51, 49, 59]), (2, [26, 44, 89])] {
            let design = SimDesign::new(d, 1, &locs).unwrap();
            let part = Partition::from_labels(&design.labels_true);
            let mut counts = [0; 3];
            design.labels_true.iter().for_each(|&l| counts[l] += 1);
            assert_eq!(counts, sizes);
            assert_eq!(part.k_active(), 3);
            // every site of block c lies west of every site of block c + 1
            for c in 0..2 {
                let east = design
                    .labels_true
                    .iter()
                    .zip(&locs)
                    .filter(|(l, _)| **l == c)
                    .map(|(_, s)| s.lon)
                    .fold(f64::NEG_INFINITY, f64::max);
                let west = design
                    .labels_true
                    .iter()
                    .zip(&locs)
                    .filter(|(l, _)| **l == c + 1)
                    .map(|(_, s)| s.lon)
                    .fold(f64::INFINITY, f64::min);
                assert!(east <= west);
            }
        }
        assert!(locs.iter().all(|l| (LAT_RANGE.0..LAT_RANGE.1).contains(&l.lat)));
        assert!(SimDesign::new(3, 1, &locs).is_err());
        assert!(SimDesign::new(1, 4, &locs).is_err());
    }

    #[test]
    fn noiseless_model_one_is_exact() {
        let locs = synthetic_sites(30, 3);
        let design = SimDesign {
            labels_true: (0..30).map(|i| i % 3).collect(),
            betas_true: TRUE_BETAS.iter().map(|b| b.to_vec()).collect(),
            model: 1,
            noise_sd: 0.0,
            gcd_scaling: GcdScaling::StdDev,
            kappas_true: [5.0, 3.0],
        };
        let (data, truth) = generate_dataset(&design, &locs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..30 {
            let fit: f64 = (0..3).map(|l| data.x[(i, l)] * truth.site_betas[i][l]).sum();
            assert_eq!(data.y[i], fit);
        }
        assert!(data.x.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn generation_is_reproducible() {
        let locs = synthetic_sites(N_SITES, SITES_SEED);
        let design = SimDesign::new(2, 3, &locs).unwrap();
        let a = generate_dataset(&design, &locs, &mut replicate_rng(9, 2)).unwrap();
        let b = generate_dataset(&design, &locs, &mut replicate_rng(9, 2)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&design, &locs, &mut replicate_rng(9, 3)).unwrap();
        assert_ne!(a.0.y, c.0.y);
    }

    #[test]
    fn model_three_covariance_has_quarter_diagonal() {
        let locs = synthetic_sites(40, 5);
        let design = SimDesign {
            labels_true: (0..40).map(|i| i % 3).collect(),
            betas_true: TRUE_BETAS.iter().map(|b| b.to_vec()).collect(),
            model: 3,
            noise_sd: NOISE_SD,
            gcd_scaling: GcdScaling::StdDev,
            kappas_true: [5.0, 3.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<Vec<f64>> = (0..2).map(|_| (0..40).map(|_| rng.random()).collect()).collect();
        let cov = design.w_covariance(&locs, &z).unwrap().unwrap();
        for i in 0..40 {
            assert!((cov[(i, i)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn model_two_effects_match_covariance() {
        let locs = synthetic_sites(12, 8);
        let design = SimDesign {
            labels_true: (0..12).map(|i| i % 3).collect(),
            betas_true: TRUE_BETAS.iter().map(|b| b.to_vec()).collect(),
            model: 2,
            noise_sd: NOISE_SD,
            gcd_scaling: GcdScaling::StdDev,
            kappas_true: [5.0, 3.0],
        };
        let d = distance_matrix(&locs).unwrap().scaled(GcdScaling::StdDev);
        let oracle = DMatrix::from_fn(12, 12, |i, j| {
            0.25 * (if i == j { 0.96 } else { 0.0 } + 0.04 * (-d.get(i, j) / 4.0).exp())
        });
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reps = 10_000;
        let mut acc = DMatrix::zeros(12, 12);
        for _ in 0..reps {
            let (_, truth) = generate_dataset(&design, &locs, &mut rng).unwrap();
            let w = DVector::from_vec(truth.w);
            acc += &w * w.transpose();
        }
        acc /= reps as f64;
        assert!((acc - &oracle).norm() / oracle.norm() < 0.05);
    }

    #[test]
    fn model_one_response_noise_variance() {
        let locs = synthetic_sites(3, 1);
        let design = SimDesign {
            labels_true: vec![0, 1, 2],
            betas_true: TRUE_BETAS.iter().map(|b| b.to_vec()).collect(),
            model: 1,
            noise_sd: NOISE_SD,
            gcd_scaling: GcdScaling::StdDev,
            kappas_true: [5.0, 3.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 20_000;
        let resid: Vec<f64> = (0..n)
            .map(|_| {
                let (data, truth) = generate_dataset(&design, &locs, &mut rng).unwrap();
                let fit: f64 = (0..3).map(|l| data.x[(0, l)] * truth.site_betas[0][l]).sum();
                data.y[0] - fit
            })
            .collect();
        let v = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
        // variance of a sample variance of normals: 2 sigma^4 / n
        assert!((v - 0.01).abs() < 3.0 * (2.0 * 1e-4 / n as f64).sqrt());
    }
}
