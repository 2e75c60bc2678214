//! Hybrid Gibbs / population Monte Carlo sampler.
//!
//! One sweep updates, in order: the concentration `η` (Metropolis–Hastings),
//! the mixture weights (Gibbs), every cluster's skew-normal block (a PMC move
//! for occupied clusters, a prior redraw for empty ones), and the
//! assignments (Gibbs, against particle-mean parameters). Near-duplicate
//! clusters are merged at a fixed cadence.

pub mod conditionals;
pub mod merge;
pub mod pmc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{self, SpdFactor};
use crate::error::{Error, Result};
use crate::model::{self, init_state, ChainState, ClusterParams, Counts, Dataset, Hyper, ParticleCloud};
use crate::rng::{self, Tag};
use crate::sn::SnShape;

pub use merge::merge_clusters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance rate targeted while tuning the `η` proposal during burn-in.
    pub mh_adapt_target: f64,
    /// Merge attempts happen every this many iterations.
    pub merge_check_every: usize,
    /// Attempt merges during burn-in too, not only after it.
    pub merge_during_burn_in: bool,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Iterations between progress log lines; 0 disables them.
    pub progress_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 2000,
            n_burn: 1000,
            thin: 2,
            seed: 1,
            mh_adapt_target: 0.35,
            merge_check_every: 10,
            merge_during_burn_in: true,
            workers: 0,
            progress_every: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 || self.merge_check_every == 0 {
            return Err(Error::invalid("n_iter, thin and merge_check_every must be positive"));
        }
        if self.n_burn >= self.n_iter {
            return Err(Error::invalid("n_burn must be smaller than n_iter"));
        }
        if !(self.mh_adapt_target > 0.0 && self.mh_adapt_target < 1.0) {
            return Err(Error::invalid("mh_adapt_target must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Number of snapshots a run will store.
    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

/// Hyperparameters with their factorizations, shared by every cluster move.
#[derive(Debug, Clone)]
pub struct Priors {
    pub n_samples: usize,
    pub b0: DVector<f64>,
    pub b0_factor: SpdFactor,
    pub b0_inv: DMatrix<f64>,
    pub m: f64,
    pub lambda: DMatrix<f64>,
    pub lambda_factor: SpdFactor,
    pub nu0: f64,
    pub e0: DMatrix<f64>,
    pub e0_factor: SpdFactor,
}

impl Priors {
    pub fn new(hyper: &Hyper, n_samples: usize) -> Result<Self> {
        let b0_factor = SpdFactor::new(&hyper.big_b0)?;
        Ok(Priors {
            n_samples,
            b0: hyper.b0.clone(),
            b0_inv: b0_factor.inverse(),
            b0_factor,
            m: hyper.m,
            lambda: hyper.lambda.clone(),
            lambda_factor: SpdFactor::new(&hyper.lambda)?,
            nu0: hyper.nu0,
            e0: hyper.e0.clone(),
            e0_factor: SpdFactor::new(&hyper.e0)?,
        })
    }
}

/// Tuning state of the `η` proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTuning {
    pub log_a0: f64,
    pub proposed: usize,
    pub accepted: usize,
}

impl Default for EtaTuning {
    fn default() -> Self {
        EtaTuning {
            log_a0: 0.0,
            proposed: 0,
            accepted: 0,
        }
    }
}

impl EtaTuning {
    pub fn a0(&self) -> f64 {
        self.log_a0.exp()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Metropolis–Hastings update of `η`. With `adapt`, `ln a₀` takes a
/// Robbins–Monro step toward `target` acceptance.
#[allow(clippy::too_many_arguments)]
pub fn update_eta<R: Rng + ?Sized>(
    state: &mut ChainState,
    hyper: &Hyper,
    tuning: &mut EtaTuning,
    adapt: Option<(f64, usize)>,
    with_weights: bool,
    rng: &mut R,
) -> bool {
    let a0 = tuning.a0();
    let eta = state.eta;
    let (shape, rate) = conditionals::eta_proposal(eta, a0);
    // a shape too small to sample counts as a rejected move
    let eta_star: f64 = match Gamma::new(shape, 1.0 / rate) {
        Ok(g) => g.sample(rng),
        Err(_) => 0.0,
    };
    let log_r = if eta_star > 0.0 && eta_star.is_finite() {
        conditionals::eta_log_accept_ratio(eta, eta_star, a0, &state.log_weights, hyper.a_eta, hyper.b_eta, with_weights)
    } else {
        f64::NEG_INFINITY
    };
    let accept_prob = if log_r.is_nan() { 0.0 } else { log_r.min(0.0).exp() };
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        state.eta = eta_star;
    }
    tuning.proposed += 1;
    tuning.accepted += accepted as usize;
    if let Some((target, t)) = adapt {
        let gain = (t.max(1) as f64).powf(-0.6);
        tuning.log_a0 = (tuning.log_a0 - gain * (accept_prob - target)).clamp(-20.0, 20.0);
    }
    accepted
}

/// Draws every sample's weights from `Dirichlet(ζ n_{j,k} + η/K)`.
pub fn update_weights<R: Rng + ?Sized>(state: &mut ChainState, counts: &Counts, zeta: f64, rng: &mut R) {
    for (j, row_counts) in counts.per_sample.iter().enumerate() {
        let alpha = conditionals::weight_concentrations(row_counts, state.eta, zeta);
        let lw = dist::log_dirichlet_sample(&alpha, rng);
        for (k, v) in lw.into_iter().enumerate() {
            state.log_weights[(j, k)] = v;
        }
    }
}

/// Redraws all particles of every empty cluster from the priors and sets the
/// cluster's parameters to the first of them. Occupied clusters are left
/// untouched.
pub fn update_empty_clusters(
    state: &mut ChainState,
    clouds: &mut [ParticleCloud],
    counts: &Counts,
    priors: &Priors,
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let fresh: Vec<(usize, ClusterParams)> = clouds
        .par_iter_mut()
        .enumerate()
        .filter(|(k, _)| counts.total[*k] == 0)
        .map(|(k, cloud)| pmc::refresh_from_prior(cloud, k, priors, seed, iteration).map(|c| (k, c)))
        .collect::<Result<_>>()?;
    for (k, c) in fresh {
        state.clusters[k] = c;
    }
    Ok(())
}

/// Member indices of each cluster, in observation order.
pub fn members_by_cluster(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![Vec::new(); k];
    for (i, &t) in labels.iter().enumerate() {
        m[t].push(i);
    }
    m
}

/// PMC sweep of every occupied cluster, then prior refresh of empty ones.
pub fn update_clusters(
    state: &mut ChainState,
    clouds: &mut [ParticleCloud],
    data: &Dataset,
    counts: &Counts,
    priors: &Priors,
    zeta: f64,
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let members = members_by_cluster(&state.labels, state.k());
    let swept: Vec<(usize, ClusterParams, Vec<f64>)> = clouds
        .par_iter_mut()
        .zip(members.into_par_iter())
        .enumerate()
        .filter(|(k, _)| counts.total[*k] > 0)
        .map(|(k, (cloud, mem))| {
            pmc::sweep_cluster(cloud, k, mem, data, priors, zeta, seed, iteration).map(|(c, z)| (k, c, z))
        })
        .collect::<Result<_>>()?;
    for (k, c, z) in swept {
        for (r, &i) in clouds[k].members.iter().enumerate() {
            state.z[i] = z[r];
        }
        state.clusters[k] = c;
    }
    update_empty_clusters(state, clouds, counts, priors, seed, iteration)
}

/// Draws every assignment from `P(T_i = k) ∝ π_{j,k} SN(y_i; ξ_{j,k}, G_k, ψ_k)`
/// using the current cluster parameters, and returns the new counts.
pub fn update_t(state: &mut ChainState, data: &Dataset, seed: u64, iteration: u64) -> Result<Counts> {
    let k = state.k();
    let p = data.p();
    let shapes: Vec<SnShape> = state
        .clusters
        .iter()
        .map(|c| c.shape())
        .collect::<Result<_>>()?;
    let log_weights: Vec<Vec<f64>> = state.log_weights.row_iter().map(|r| r.iter().copied().collect()).collect();
    let clusters = &state.clusters;
    let labels: Vec<Option<usize>> = (0..data.n())
        .into_par_iter()
        .map_init(
            || (vec![0.0; p], vec![0.0; k]),
            |(scratch, logp), i| {
                let j = data.sample_of()[i];
                let locs: Vec<&[f64]> = clusters.iter().map(|c| c.xi[j].as_slice()).collect();
                conditionals::assignment_log_probs(data.row(i), &log_weights[j], &shapes, &locs, scratch, logp);
                model::pick_log(logp, rng::uniform(seed, Tag::Assign, iteration, i as u64))
            },
        )
        .collect();
    for (i, l) in labels.into_iter().enumerate() {
        state.labels[i] = l.ok_or(Error::NoFeasibleCluster { observation: i })?;
    }
    Ok(state.counts(data))
}

/// Stored snapshots plus run summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub snapshots: Vec<ChainState>,
    pub eta_tuning: EtaTuning,
}

/// Sampler driver owning the current state and the particle clouds.
pub struct Sampler<'a> {
    data: &'a Dataset,
    hyper: Hyper,
    priors: Priors,
    config: SamplerConfig,
    state: ChainState,
    clouds: Vec<ParticleCloud>,
    tuning: EtaTuning,
    counts: Counts,
    eta_uses_weights: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, hyper: Hyper, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        hyper.validate(data.p())?;
        let priors = Priors::new(&hyper, data.n_samples())?;
        let mut r = rng::stream(config.seed, Tag::Init, 0, 0);
        let (state, clouds) = init_state(data, &hyper, &mut r)?;
        let counts = state.counts(data);
        Ok(Sampler {
            data,
            hyper,
            priors,
            config,
            state,
            clouds,
            tuning: EtaTuning::default(),
            counts,
            eta_uses_weights: true,
        })
    }

    /// Drops the weights' Dirichlet density from the `η` target, so `η`
    /// samples its Gamma prior. Used to check the MH kernel in isolation.
    pub fn eta_prior_only(mut self) -> Self {
        self.eta_uses_weights = false;
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    pub fn tuning(&self) -> &EtaTuning {
        &self.tuning
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    /// One full sweep; returns the iteration number just completed.
    pub fn step(&mut self) -> Result<usize> {
        let t = self.state.iteration + 1;
        self.sweep(t).map_err(|e| Error::AtIteration {
            iteration: t,
            source: Box::new(e),
        })?;
        self.state.iteration = t;
        Ok(t)
    }

    fn sweep(&mut self, t: usize) -> Result<()> {
        let seed = self.config.seed;
        let it = t as u64;
        let zeta = self.hyper.zeta;
        let adapt = (t <= self.config.n_burn).then_some((self.config.mh_adapt_target, t));
        update_eta(
            &mut self.state,
            &self.hyper,
            &mut self.tuning,
            adapt,
            self.eta_uses_weights,
            &mut rng::stream(seed, Tag::Eta, it, 0),
        );
        update_weights(&mut self.state, &self.counts, zeta, &mut rng::stream(seed, Tag::Weights, it, 0));
        update_clusters(
            &mut self.state,
            &mut self.clouds,
            self.data,
            &self.counts,
            &self.priors,
            zeta,
            seed,
            it,
        )?;
        self.counts = update_t(&mut self.state, self.data, seed, it)?;
        Ok(())
    }

    /// Merge at the configured cadence after iteration `t`. Weights are
    /// redrawn from their conditional after a merge so no cluster keeps a
    /// zero weight. Returns the number of absorbed clusters.
    pub fn maybe_merge(&mut self, t: usize) -> Result<usize> {
        let burning = t <= self.config.n_burn && !self.config.merge_during_burn_in;
        if burning || t % self.config.merge_check_every != 0 {
            return Ok(0);
        }
        let merged = merge_clusters(&mut self.state, self.hyper.merge_threshold)?;
        if !merged.is_empty() {
            self.counts = self.state.counts(self.data);
            let mut r = rng::stream(self.config.seed, Tag::MergeWeights, t as u64, 0);
            update_weights(&mut self.state, &self.counts, self.hyper.zeta, &mut r);
            log::debug!("iteration {t}: merged {merged:?}");
        }
        Ok(merged.len())
    }

    fn is_stored(&self, t: usize) -> bool {
        t > self.config.n_burn && (t - self.config.n_burn - 1) % self.config.thin == 0
    }

    pub fn run(mut self) -> Result<Chain> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| self.run_inner())
    }

    fn run_inner(&mut self) -> Result<Chain> {
        let mut snapshots = Vec::with_capacity(self.config.n_stored());
        for _ in 0..self.config.n_iter {
            let t = self.step()?;
            if self.is_stored(t) {
                snapshots.push(self.state.clone());
            }
            self.maybe_merge(t).map_err(|e| Error::AtIteration {
                iteration: t,
                source: Box::new(e),
            })?;
            if self.config.progress_every > 0 && t % self.config.progress_every == 0 {
                let ll = model::power_loglik(&self.state, self.data, &self.hyper)?;
                log::info!(
                    "iter {t} power_loglik {ll:.3} active {} eta_accept {:.3}",
                    self.counts.active(),
                    self.tuning.acceptance_rate()
                );
            }
        }
        Ok(Chain {
            snapshots,
            eta_tuning: self.tuning.clone(),
        })
    }
}

/// Initializes and runs a chain.
pub fn run(data: &Dataset, hyper: &Hyper, config: &SamplerConfig) -> Result<Chain> {
    Sampler::new(data, hyper.clone(), config.clone())?.run()
}
