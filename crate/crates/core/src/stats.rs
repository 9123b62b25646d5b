//! Small statistical helpers shared by the sampler checks and reports.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit p-value of `observed` counts against category
/// probabilities. Categories with expected count below 5 are pooled with
/// their neighbours before the statistic is formed.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len(), "observed and probs must align");
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        o_acc += o as f64;
        e_acc += p * n;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => bins.push((o_acc, e_acc)),
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(df).expect("df > 0").cdf(stat)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor; zero for fewer than two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Monte Carlo standard error of the mean of a correlated series, by
/// non-overlapping batch means with `floor(sqrt(T))` batches.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let t = x.len();
    let b = ((t as f64).sqrt().floor() as usize).max(2);
    let size = t / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = x.chunks_exact(size).take(b).map(mean).collect();
    sample_sd(&means) / (means.len() as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_p_one() {
        assert!((chi_square_gof(&[25, 25, 50], &[0.25, 0.25, 0.5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gross_misfit_has_tiny_p() {
        assert!(chi_square_gof(&[90, 10], &[0.5, 0.5]) < 1e-10);
    }

    #[test]
    fn sparse_tail_is_pooled() {
        // 1000 draws, last two bins expect 1 each and are merged into the third.
        let p = chi_square_gof(&[600, 395, 3, 2], &[0.6, 0.397, 0.002, 0.001]);
        assert!(p > 0.05, "{p}");
    }

    #[test]
    fn sd_and_batch_means() {
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let x: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        // batches of 10 alternate evenly, so batch means are identical
        assert!(batch_means_se(&x).abs() < 1e-15);
    }

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]) - 0.5).abs() < 1e-15);
    }
}
