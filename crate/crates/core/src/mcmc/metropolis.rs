use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Coordinates on which the random walk moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// Positive values, walk on `log x`.
    Log,
    /// Simplex vectors, walk on `log(x_j / x_0)` for `j >= 1`.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhOutcome {
    pub value: Vec<f64>,
    pub log_target: f64,
    pub accepted: bool,
}

/// Proposes `x'` from `current` on the transformed scale and returns it with
/// the log-Jacobian `log |dx'/dy'| - log |dx/dy|`. Positive and simplex
/// values are floored at `floor` (simplex vectors are then renormalized).
pub fn propose<R: Rng + ?Sized>(
    current: &[f64],
    transform: Transform,
    scale: f64,
    floor: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut step = || scale * rng.sample::<f64, _>(StandardNormal);
    match transform {
        Transform::Identity => (current.iter().map(|&x| x + step()).collect(), 0.0),
        Transform::Log => {
            let next: Vec<f64> = current.iter().map(|&x| (x.ln() + step()).exp().max(floor)).collect();
            let jac = next.iter().map(|x| x.ln()).sum::<f64>() - current.iter().map(|x| x.ln()).sum::<f64>();
            (next, jac)
        }
        Transform::Softmax => {
            let x0 = current[0];
            let mut eta: Vec<f64> = vec![0.0];
            eta.extend(current[1..].iter().map(|&x| (x / x0).ln() + step()));
            let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut next: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v = (*v / s).max(floor));
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= s);
            let jac = next.iter().map(|x| x.ln()).sum::<f64>() - current.iter().map(|x| x.ln()).sum::<f64>();
            (next, jac)
        }
    }
}

/// One random-walk Metropolis step. `target` returns the unnormalized log
/// density in the original coordinates; non-finite values reject.
pub fn metropolis_step<R: Rng + ?Sized>(
    target: &mut dyn FnMut(&[f64]) -> f64,
    current: &[f64],
    current_log_target: f64,
    transform: Transform,
    scale: f64,
    floor: f64,
    rng: &mut R,
) -> MhOutcome {
    let (proposal, log_jac) = propose(current, transform, scale, floor, rng);
    let reject = MhOutcome {
        value: current.to_vec(),
        log_target: current_log_target,
        accepted: false,
    };
    if proposal.iter().any(|v| !v.is_finite()) {
        return reject;
    }
    let lp = target(&proposal);
    if !lp.is_finite() {
        return reject;
    }
    let log_ratio = lp - current_log_target + log_jac;
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        MhOutcome {
            value: proposal,
            log_target: lp,
            accepted: true,
        }
    } else {
        reject
    }
}

/// Robbins-Monro adaptation of a log proposal scale toward a target rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAdapter {
    pub log_scale: f64,
    pub target_rate: f64,
    attempts: u64,
    accepts: u64,
}

impl ScaleAdapter {
    pub fn new(scale: f64, target_rate: f64) -> Self {
        ScaleAdapter {
            log_scale: scale.ln(),
            target_rate,
            attempts: 0,
            accepts: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Records an outcome; adapts the scale when `adapt` is set.
    pub fn record(&mut self, accepted: bool, iteration: usize, adapt: bool) {
        if adapt {
            let gain = (iteration.max(1) as f64).powf(-0.6);
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_scale = (self.log_scale + gain * (a - self.target_rate)).clamp(-12.0, 3.0);
        } else {
            self.attempts += 1;
            self.accepts += u64::from(accepted);
        }
    }

    /// Acceptance rate over non-adapting iterations.
    pub fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.accepts as f64 / self.attempts as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_target_always_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.3];
        for _ in 0..1000 {
            let out = metropolis_step(&mut |_| 0.0, &x, 0.0, Transform::Identity, 1.0, 0.0, &mut rng);
            assert!(out.accepted);
            x = out.value;
        }
    }

    #[test]
    fn zero_scale_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = vec![0.2, 0.3, 0.5];
        let mut x = start.clone();
        let mut target = |a: &[f64]| -a[0] * 3.0;
        for _ in 0..100 {
            let lp = target(&x);
            x = metropolis_step(&mut target, &x, lp, Transform::Softmax, 0.0, 1e-10, &mut rng).value;
        }
        for (a, b) in x.iter().zip(&start) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_target_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = metropolis_step(&mut |_| f64::NAN, &[1.0], 0.0, Transform::Log, 0.5, 1e-12, &mut rng);
        assert!(!out.accepted);
        assert_eq!(out.value, vec![1.0]);
    }

    #[test]
    fn log_walk_recovers_lognormal() {
        // target N(0,1) on log(lambda): density of lambda is lognormal
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut target = |x: &[f64]| {
            let l = x[0].ln();
            -0.5 * l * l - l
        };
        let mut x = vec![1.0];
        let mut lp = target(&x);
        let steps = 100_000;
        let mut logs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let out = metropolis_step(&mut target, &x, lp, Transform::Log, 1.5, 1e-12, &mut rng);
            x = out.value;
            lp = out.log_target;
            logs.push(x[0].ln());
        }
        let m = crate::stats::mean(&logs);
        let se = crate::stats::batch_means_se(&logs);
        assert!(m.abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn softmax_walk_recovers_dirichlet_mean() {
        // Dirichlet(2, 3, 5) target through the simplex walk.
        let conc = [2.0, 3.0, 5.0];
        let mut target = |a: &[f64]| a.iter().zip(conc).map(|(x, c)| (c - 1.0) * x.ln()).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = vec![1.0 / 3.0; 3];
        let mut lp = target(&x);
        let mut draws = vec![Vec::new(); 3];
        for _ in 0..1_000_000 {
            let out = metropolis_step(&mut target, &x, lp, Transform::Softmax, 0.8, 1e-10, &mut rng);
            x = out.value;
            lp = out.log_target;
            for j in 0..3 {
                draws[j].push(x[j]);
            }
        }
        for j in 0..3 {
            let m = crate::stats::mean(&draws[j]);
            let se = crate::stats::batch_means_se(&draws[j]);
            assert!(
                (m - conc[j] / 10.0).abs() < 3.0 * se,
                "component {j}: {m} vs {}",
                conc[j] / 10.0
            );
        }
    }

    #[test]
    fn adapter_moves_toward_target() {
        let mut a = ScaleAdapter::new(0.5, 0.3);
        for i in 1..200 {
            a.record(true, i, true);
        }
        assert!(a.scale() > 0.5);
        assert_eq!(a.rate(), None);
        a.record(false, 200, false);
        assert_eq!(a.rate(), Some(0.0));
    }
}
