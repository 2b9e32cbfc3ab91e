//! EP with Metropolis-Hastings tilted moments for the hyperparameters.
//!
//! Each replication runs random-walk chains for `tau` and `lambda` on their
//! tilted distributions. After every block of iterations the exponential
//! beliefs are moment matched to the block's draws and the image belief is
//! refreshed by EP-ADMM sweeps at the new hyperparameter means.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diagnostics::ChainSet;
use crate::epadmm::{admm_sweep, AdmmConfig, AdmmState};
use crate::epcore::{converged, EpConfig};
use crate::error::{Result, SepError};
use crate::field::{block_tilted_log_density, FieldOptions, FieldState};
use crate::model::{log_exponential, log_normal_pdf, HierarchicalModel, ImageGrid};
use crate::rng::{stream, tags, SepRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhConfig {
    pub step_tau: f64,
    pub step_lambda: f64,
    pub iters: usize,
    pub replications: usize,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Iterations between moment updates of the exponential beliefs.
    pub block: usize,
    /// Iterations between step-size adjustments.
    pub tune_every: usize,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            step_tau: 5e-4,
            step_lambda: 5e-4,
            iters: 1000,
            replications: 10,
            target_acceptance: 0.234,
            seed: 0,
            block: 100,
            tune_every: 25,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_tau > 0.0) || !(self.step_lambda > 0.0) {
            return Err(SepError::Config("mh step sizes must be positive".into()));
        }
        if self.iters == 0 || self.replications == 0 || self.block == 0 || self.tune_every == 0 {
            return Err(SepError::Config(
                "mh.iters, mh.replications, mh.block and mh.tune_every must be at least 1".into(),
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(SepError::Config(format!(
                "mh.target_acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// `sum log N(lx | 0, tau) + log Exp(tau | cavity_rate)`; `-inf` for `tau <= 0`.
pub fn tilted_log_density_tau(tau: f64, cavity_rate: f64, lx: &ImageGrid) -> f64 {
    if !(tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lik: f64 = lx.values().iter().map(|&v| log_normal_pdf(v, 0.0, tau)).sum();
    lik + log_exponential(tau, cavity_rate).unwrap_or(f64::NAN)
}

/// One random-walk Metropolis step with Gaussian proposal of sd `step`.
pub fn mh_step<R: Rng>(current: f64, log_target: impl Fn(f64) -> f64, step: f64, rng: &mut R) -> Result<(f64, bool)> {
    if !(step > 0.0) {
        return Err(SepError::Config(format!("step must be positive, got {step}")));
    }
    let here = log_target(current);
    if here == f64::NEG_INFINITY || here.is_nan() {
        return Err(SepError::InvalidStart(current));
    }
    let z: f64 = StandardNormal.sample(rng);
    let proposal = current + step * z;
    let there = log_target(proposal);
    let u: f64 = rng.random();
    if there - here > u.ln() {
        Ok((proposal, true))
    } else {
        Ok((current, false))
    }
}

/// Multiplicative step adjustment `step * exp(acc - target)` from a window of
/// accept/reject outcomes.
pub fn tune_step(history: &[bool], step: f64, target: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(SepError::Empty("no acceptance history to tune from".into()));
    }
    let acc = history.iter().filter(|a| **a).count() as f64 / history.len() as f64;
    Ok(step * (acc - target).exp())
}

/// A tuned random-walk sampler for one scalar.
#[derive(Debug, Clone)]
pub struct TunedWalk {
    pub value: f64,
    pub step: f64,
    window: Vec<bool>,
    pub accepted: usize,
    pub proposed: usize,
}

impl TunedWalk {
    pub fn new(value: f64, step: f64) -> Self {
        Self {
            value,
            step,
            window: Vec::new(),
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn step<R: Rng>(
        &mut self,
        log_target: impl Fn(f64) -> f64,
        cfg_target: f64,
        tune_every: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let (next, acc) = mh_step(self.value, log_target, self.step, rng)?;
        self.value = next;
        self.window.push(acc);
        self.accepted += acc as usize;
        self.proposed += 1;
        if self.window.len() == tune_every {
            self.step = tune_step(&self.window, self.step, cfg_target)?;
            self.window.clear();
        }
        Ok(next)
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Settings of the EP-ADMM refresh between hyperparameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerConfig {
    pub admm: AdmmConfig,
    pub ep: EpConfig,
    pub opts: FieldOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau_rate: f64,
    pub lambda_rate: f64,
    pub acceptance_tau: f64,
    pub acceptance_lambda: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpMcmcResult {
    pub tau_chains: ChainSet,
    pub lambda_chains: ChainSet,
    /// Posterior means over all draws of all replications.
    pub tau_mean: f64,
    pub lambda_mean: f64,
    /// Image mean averaged over replications.
    pub mean: ImageGrid,
    pub replications: Vec<Replication>,
}

/// Rate of the exponential matching the mean of `draws`.
pub fn matched_rate(draws: &[f64]) -> Result<f64> {
    if draws.is_empty() {
        return Err(SepError::Empty("no draws to moment match".into()));
    }
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    if !(m > 0.0) {
        return Err(SepError::Numeric(format!("tilted sample mean {m} is not positive")));
    }
    Ok(1.0 / m)
}

fn refresh_field(field: &mut FieldState, inner: &InnerConfig) -> Result<()> {
    let mut admm = AdmmState::new(field.len(), &inner.admm)?;
    let (tau, lambda) = (field.tau.mean(), field.lambda.mean());
    for _ in 0..inner.ep.max_sweeps {
        let prev = field.ep.clone();
        admm_sweep(field, &mut admm, tau, lambda, inner.ep.damping)?;
        if converged(&prev, &field.ep, inner.ep.tol) {
            break;
        }
    }
    Ok(())
}

/// One replication on its own stream.
pub fn run_replication(
    y: &ImageGrid,
    model: &HierarchicalModel,
    cfg: &MhConfig,
    inner: &InnerConfig,
    r: usize,
) -> Result<Replication> {
    let mut rng: SepRng = stream(cfg.seed, tags::EPMCMC_REPLICATION + r as u64);
    let mut field = FieldState::new(y, model, inner.opts.tau0, inner.opts.lambda0)?;
    refresh_field(&mut field, inner)?;
    let n = field.len();
    let mut tau = TunedWalk::new(inner.opts.tau0, cfg.step_tau);
    let mut lambda = TunedWalk::new(inner.opts.lambda0, cfg.step_lambda);
    let mut tau_draws = Vec::with_capacity(cfg.iters);
    let mut lambda_draws = Vec::with_capacity(cfg.iters);
    let mut done = 0;
    while done < cfg.iters {
        let len = cfg.block.min(cfg.iters - done);
        let q = field.prior_statistic();
        let s = field.noise_statistic();
        let cav_tau = field.tau.cavity_rate()?;
        let cav_lambda = field.lambda.cavity_rate()?;
        for _ in 0..len {
            tau_draws.push(tau.step(
                |t| block_tilted_log_density(t, n, q, cav_tau),
                cfg.target_acceptance,
                cfg.tune_every,
                &mut rng,
            )?);
            lambda_draws.push(lambda.step(
                |l| block_tilted_log_density(l, n, s, cav_lambda),
                cfg.target_acceptance,
                cfg.tune_every,
                &mut rng,
            )?);
        }
        if inner.opts.learn_hyper {
            field.tau.set_rate(matched_rate(&tau_draws[done..done + len])?)?;
            field.lambda.set_rate(matched_rate(&lambda_draws[done..done + len])?)?;
            refresh_field(&mut field, inner)?;
        }
        done += len;
    }
    Ok(Replication {
        tau: tau_draws,
        lambda: lambda_draws,
        tau_rate: field.tau.rate(),
        lambda_rate: field.lambda.rate(),
        acceptance_tau: tau.acceptance(),
        acceptance_lambda: lambda.acceptance(),
        mean: field.means(),
    })
}

/// Runs `cfg.replications` independent replications in parallel.
pub fn run_ep_mcmc(
    y: &ImageGrid,
    model: &HierarchicalModel,
    cfg: &MhConfig,
    inner: &InnerConfig,
) -> Result<EpMcmcResult> {
    cfg.validate()?;
    inner.ep.validate()?;
    let reps: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(y, model, cfg, inner, r))
        .collect::<Result<_>>()?;
    let tau_chains = ChainSet::new(reps.iter().map(|r| r.tau.clone()).collect())?;
    let lambda_chains = ChainSet::new(reps.iter().map(|r| r.lambda.clone()).collect())?;
    let n = y.len();
    let mut mean = vec![0.0; n];
    for r in &reps {
        for (acc, v) in mean.iter_mut().zip(&r.mean) {
            *acc += v / reps.len() as f64;
        }
    }
    Ok(EpMcmcResult {
        tau_mean: tau_chains.mean(),
        lambda_mean: lambda_chains.mean(),
        tau_chains,
        lambda_chains,
        mean: ImageGrid::new(y.rows(), y.cols(), mean)?,
        replications: reps,
    })
}
