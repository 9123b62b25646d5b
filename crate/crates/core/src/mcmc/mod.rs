//! Posterior sampler: Gibbs updates where conjugate, random-walk Metropolis
//! for the covariance weights, kernel ranges and the Poisson rate.

mod cache;
mod labels;
mod metropolis;
mod split_merge;
mod updates;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::CovCache;
pub use labels::{update_labels, LabelUpdate};
pub use metropolis::{metropolis_step, propose, MhOutcome, ScaleAdapter, Transform};
pub use split_merge::{collapsed_log_likelihood, split_merge_step, SplitMergeOutcome};
pub use updates::{
    fresh_coefficient, update_cluster_coefficients, update_precisions, update_random_effects, update_sigma2,
    update_tau_y, POSITIVE_FLOOR,
};

use crate::error::{Error, Result};
use crate::mfm::{log_symmetric_dirichlet, MixtureWeights, Partition};
use crate::model::{
    kappa_logpdf, lognormal_logpdf, per_observation_logdens, random_effect_logdens, ModelState, SpatialDataset,
    SpatialModel,
};

pub const ALPHA_FLOOR: f64 = 1e-10;
const TARGET_ACCEPTANCE: f64 = 0.3;
const MAX_RANGE_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub thin: usize,
    /// Number of thinned records discarded from the start.
    pub burn_in: usize,
    pub seed: u64,
    /// Initial random-walk scale for every Metropolis block.
    pub proposal_scale: f64,
    /// Per-block overrides keyed by block name (`alpha`, `kappa[z1]`, `lambda`).
    pub proposal_scales: BTreeMap<String, f64>,
    /// Robbins-Monro scale adaptation during burn-in.
    pub adapt: bool,
    pub label_update: LabelUpdate,
    /// Follow the label update with one split-merge proposal.
    pub split_merge: bool,
    /// Drop the likelihood from every update and sample the prior.
    pub prior_only: bool,
    /// Start from random labels instead of a single cluster.
    pub random_init: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 25_000,
            thin: 2,
            burn_in: 9_500,
            seed: 1,
            proposal_scale: 0.5,
            proposal_scales: BTreeMap::new(),
            adapt: true,
            label_update: LabelUpdate::Blocked,
            split_merge: true,
            prior_only: false,
            random_init: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_iter / self.thin <= self.burn_in {
            return Err(Error::Config(format!(
                "n_iter / thin = {} thinned records do not exceed burn_in = {}",
                self.n_iter / self.thin,
                self.burn_in
            )));
        }
        if !(self.proposal_scale >= 0.0 && self.proposal_scale.is_finite())
            || self.proposal_scales.values().any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::Config("proposal scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn n_retained(&self) -> usize {
        self.n_iter / self.thin - self.burn_in
    }

    /// Iterations (1-based) up to which scales adapt.
    pub fn adaptation_end(&self) -> usize {
        self.burn_in * self.thin
    }

    fn scale_for(&self, block: &str) -> f64 {
        self.proposal_scales.get(block).copied().unwrap_or(self.proposal_scale)
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub states: Vec<ModelState>,
    /// `T x n`, `log f(y_i | state_t)`.
    pub per_obs_logdens: Vec<Vec<f64>>,
    /// Acceptance rate per Metropolis block after adaptation.
    pub acceptance: BTreeMap<String, f64>,
    /// Final proposal scale per block.
    pub scales: BTreeMap<String, f64>,
    /// Iteration index of each retained draw.
    pub iterations: Vec<usize>,
    /// Iterations at which `k` reached the truncation.
    pub k_max_hits: usize,
    /// Range multiplier applied at initialization to make `H` factorizable.
    pub initial_range_scale: f64,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

struct Block {
    name: String,
    adapter: ScaleAdapter,
}

/// A single chain: the current state, its covariance cache and proposal
/// scales. One call to [`Sampler::sweep`] is one iteration.
pub struct Sampler<'m> {
    model: &'m SpatialModel,
    cfg: ChainConfig,
    state: ModelState,
    cache: CovCache,
    alpha_block: Block,
    kappa_blocks: Vec<Block>,
    lambda_block: Block,
    split_merge: ScaleAdapter,
    k_max_hits: usize,
    initial_range_scale: f64,
}

fn chained(iteration: usize, block: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Chain {
        iteration,
        block,
        source: Box::new(e),
    }
}

impl<'m> Sampler<'m> {
    pub fn new<R: Rng + ?Sized>(
        data: &SpatialDataset,
        model: &'m SpatialModel,
        cfg: &ChainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if model.cov.n() != data.n() {
            return Err(Error::Input(format!(
                "covariance has dimension {}, dataset has {} sites",
                model.cov.n(),
                data.n()
            )));
        }
        let n = data.n();
        let p = data.p();
        let hyper = &model.hyper;
        let k = model.prior.initial_k();
        let (partition, weights) = if cfg.random_init {
            let k0 = k.max(model.prior.k_max().min(5));
            let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..k0)).collect();
            let part = Partition::from_labels(&raw);
            let kk = k0.max(part.k_active());
            (part, MixtureWeights::uniform(kk))
        } else {
            (Partition::single_cluster(n), MixtureWeights::uniform(k))
        };
        let ka = partition.k_active();
        let mut betas = DMatrix::zeros(ka, p);
        let mut mus = DMatrix::zeros(ka, p);
        let mut taus = DMatrix::zeros(ka, p);
        for h in 0..ka {
            for l in 0..p {
                let (m, t, b) = fresh_coefficient(hyper, rng)?;
                mus[(h, l)] = m;
                taus[(h, l)] = t;
                betas[(h, l)] = b;
            }
        }
        let alphas = model.cov.initial_alphas();
        let mut kappas = vec![1.0; model.cov.n_kappas()];
        let mut range_scale = 1.0;
        let mut cache = CovCache::new(&model.cov, &alphas, &kappas);
        let mut doublings = 0;
        while cache.is_err() && doublings < MAX_RANGE_DOUBLINGS && !kappas.is_empty() {
            range_scale *= 2.0;
            kappas.iter_mut().for_each(|k| *k *= 2.0);
            cache = CovCache::new(&model.cov, &alphas, &kappas);
            doublings += 1;
        }
        let cache = cache?;
        if range_scale > 1.0 {
            log::warn!(
                "{} covariance not factorizable at unit ranges; starting ranges at {range_scale}",
                model.cov.name()
            );
        }
        let state = ModelState {
            partition,
            weights,
            betas,
            mus,
            taus,
            w: DVector::zeros(n),
            tau_y: 1.0,
            sigma2: 1.0,
            alphas,
            kappas,
            lambda: model.prior.initial_lambda(),
        };
        state.validate(data, &model.cov)?;
        let block = |name: String| Block {
            adapter: ScaleAdapter::new(cfg.scale_for(&name), TARGET_ACCEPTANCE),
            name,
        };
        let kappa_blocks = model
            .cov
            .kernel_labels()
            .iter()
            .map(|l| block(format!("kappa[{l}]")))
            .collect();
        Ok(Sampler {
            model,
            cfg: cfg.clone(),
            state,
            cache,
            alpha_block: block("alpha".into()),
            kappa_blocks,
            lambda_block: block("lambda".into()),
            split_merge: ScaleAdapter::new(1.0, TARGET_ACCEPTANCE),
            k_max_hits: 0,
            initial_range_scale: range_scale,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn cache(&self) -> &CovCache {
        &self.cache
    }

    /// One full sweep. `iteration` is 1-based and controls adaptation.
    pub fn sweep<R: Rng + ?Sized>(&mut self, data: &SpatialDataset, iteration: usize, rng: &mut R) -> Result<()> {
        let lik = !self.cfg.prior_only;
        let hyper = &self.model.hyper;
        let prior = self.model.prior.as_ref();
        let adapt = self.cfg.adapt && iteration <= self.cfg.adaptation_end();
        let it = iteration;

        update_labels(
            data,
            &mut self.state,
            &mut self.cache,
            hyper,
            self.cfg.label_update,
            lik,
            rng,
        )
        .map_err(chained(it, "labels"))?;
        if self.cfg.split_merge {
            let out = split_merge_step(data, &mut self.state, &self.cache, hyper, prior, lik, rng)
                .map_err(chained(it, "split_merge"))?;
            self.split_merge.record(out.accepted, it, adapt);
        }

        let mut dyn_rng = RngAdapter(rng);
        let k = prior
            .sample_k(&self.state.partition, self.state.lambda, &mut dyn_rng)
            .map_err(chained(it, "weights"))?;
        if k == prior.k_max() {
            self.k_max_hits += 1;
        }
        self.state.weights = prior
            .sample_weights(k, &self.state.partition, &mut dyn_rng)
            .map_err(chained(it, "weights"))?;
        let rng = dyn_rng.0;

        update_cluster_coefficients(data, &mut self.state, hyper, lik, rng).map_err(chained(it, "coefficients"))?;
        update_random_effects(data, &mut self.state, &self.cache, lik, rng).map_err(chained(it, "random_effects"))?;
        update_tau_y(data, &mut self.state, hyper, lik, rng).map_err(chained(it, "tau_y"))?;
        update_sigma2(&mut self.state, &self.cache, hyper, rng).map_err(chained(it, "sigma2"))?;

        if self.model.cov.alphas_free() {
            self.step_alpha(adapt, it, rng);
        }
        for j in 0..self.state.kappas.len() {
            self.step_kappa(j, adapt, it, rng);
        }
        if prior.learns_lambda() {
            self.step_lambda(adapt, it, rng);
        }
        self.state
            .validate(data, &self.model.cov)
            .map_err(chained(it, "state"))?;
        Ok(())
    }

    fn step_alpha<R: Rng + ?Sized>(&mut self, adapt: bool, it: usize, rng: &mut R) {
        let nu = self.model.hyper.nu;
        let w = &self.state.w;
        let sigma2 = self.state.sigma2;
        let current =
            random_effect_logdens(w, sigma2, &self.cache.factor) + log_symmetric_dirichlet(&self.state.alphas, nu);
        let mut best: Option<CovCache> = None;
        let (cov, cache) = (&self.model.cov, &self.cache);
        let mut target = |a: &[f64]| match cache.propose(cov, a, None) {
            Ok(c) => {
                let lp = random_effect_logdens(w, sigma2, &c.factor) + log_symmetric_dirichlet(a, nu);
                best = Some(c);
                lp
            }
            Err(_) => {
                best = None;
                f64::NEG_INFINITY
            }
        };
        let out = metropolis_step(
            &mut target,
            &self.state.alphas,
            current,
            Transform::Softmax,
            self.alpha_block.adapter.scale(),
            ALPHA_FLOOR,
            rng,
        );
        if out.accepted {
            self.state.alphas = out.value;
            self.cache = best.expect("accepted proposal has a cache");
        }
        self.alpha_block.adapter.record(out.accepted, it, adapt);
    }

    fn step_kappa<R: Rng + ?Sized>(&mut self, j: usize, adapt: bool, it: usize, rng: &mut R) {
        let hp = &self.model.hyper;
        let w = &self.state.w;
        let sigma2 = self.state.sigma2;
        let alphas = &self.state.alphas;
        let current = random_effect_logdens(w, sigma2, &self.cache.factor)
            + kappa_logpdf(self.state.kappas[j], hp.kappa_shape, hp.kappa_rate);
        let mut best: Option<CovCache> = None;
        let (cov, cache) = (&self.model.cov, &self.cache);
        let mut target = |k: &[f64]| {
            let base = cov.base(j, k[0]);
            match cache.propose(cov, alphas, Some((j, base))) {
                Ok(c) => {
                    let lp =
                        random_effect_logdens(w, sigma2, &c.factor) + kappa_logpdf(k[0], hp.kappa_shape, hp.kappa_rate);
                    best = Some(c);
                    lp
                }
                Err(_) => {
                    best = None;
                    f64::NEG_INFINITY
                }
            }
        };
        let out = metropolis_step(
            &mut target,
            &[self.state.kappas[j]],
            current,
            Transform::Log,
            self.kappa_blocks[j].adapter.scale(),
            POSITIVE_FLOOR,
            rng,
        );
        if out.accepted {
            self.state.kappas[j] = out.value[0];
            self.cache = best.expect("accepted proposal has a cache");
        }
        self.kappa_blocks[j].adapter.record(out.accepted, it, adapt);
    }

    fn step_lambda<R: Rng + ?Sized>(&mut self, adapt: bool, it: usize, rng: &mut R) {
        let hp = &self.model.hyper;
        let prior = self.model.prior.as_ref();
        let k = self.state.k();
        let mut target =
            |l: &[f64]| prior.log_k_given_lambda(k, l[0]) + lognormal_logpdf(l[0], hp.lambda_meanlog, hp.lambda_sdlog);
        let current = target(&[self.state.lambda]);
        let out = metropolis_step(
            &mut target,
            &[self.state.lambda],
            current,
            Transform::Log,
            self.lambda_block.adapter.scale(),
            POSITIVE_FLOOR,
            rng,
        );
        if out.accepted {
            self.state.lambda = out.value[0];
        }
        self.lambda_block.adapter.record(out.accepted, it, adapt);
    }

    fn blocks(&self) -> impl Iterator<Item = &Block> {
        let alpha = self.model.cov.alphas_free().then_some(&self.alpha_block);
        let lambda = self.model.prior.learns_lambda().then_some(&self.lambda_block);
        alpha.into_iter().chain(self.kappa_blocks.iter()).chain(lambda)
    }

    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        let sm = self.cfg.split_merge.then(|| self.split_merge.rate()).flatten();
        self.blocks()
            .filter_map(|b| b.adapter.rate().map(|r| (b.name.clone(), r)))
            .chain(sm.map(|r| ("split_merge".to_string(), r)))
            .collect()
    }

    pub fn scales(&self) -> BTreeMap<String, f64> {
        self.blocks().map(|b| (b.name.clone(), b.adapter.scale())).collect()
    }
}

/// Lets a generic `Rng` be lent out as `&mut dyn RngCore`.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Runs a full chain seeded from `cfg.seed`.
pub fn run_chain(data: &SpatialDataset, model: &SpatialModel, cfg: &ChainConfig) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_chain_with_rng(data, model, cfg, &mut rng)
}

pub fn run_chain_with_rng<R: Rng + ?Sized>(
    data: &SpatialDataset,
    model: &SpatialModel,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(data, model, cfg, rng)?;
    let t = cfg.n_retained();
    let mut states = Vec::with_capacity(t);
    let mut logdens = Vec::with_capacity(t);
    let mut iterations = Vec::with_capacity(t);
    for it in 1..=cfg.n_iter {
        sampler.sweep(data, it, rng)?;
        if it % cfg.thin == 0 && it / cfg.thin > cfg.burn_in && states.len() < t {
            let s = sampler.state().clone();
            logdens.push(per_observation_logdens(data, &s));
            states.push(s);
            iterations.push(it);
        }
    }
    Ok(ChainOutput {
        acceptance: sampler.acceptance(),
        scales: sampler.scales(),
        k_max_hits: sampler.k_max_hits,
        initial_range_scale: sampler.initial_range_scale,
        states,
        per_obs_logdens: logdens,
        iterations,
    })
}
