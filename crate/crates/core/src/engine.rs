//! Named engines behind common traits, selected at runtime.

use crate::baseline::run_full_mcmc;
use crate::clutter::{ep_clutter, epadmm_clutter, epmc_clutter, ClutterFit, ClutterModel};
use crate::config::RunConfig;
use crate::diagnostics::ChainSet;
use crate::epadmm::epadmm_reconstruct;
use crate::epmc::epmc_fit;
use crate::epmcmc::run_ep_mcmc;
use crate::error::{Result, SepError};
use crate::io::Report;
use crate::model::{ImageGrid, VarianceSummary};

/// Output shared by every image engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mean: ImageGrid,
    pub variance: Option<ImageGrid>,
    /// Posterior mean of the prior variance `tau`.
    pub tau: f64,
    /// Posterior mean of the noise variance `lambda`.
    pub lambda: f64,
    pub tau_trace: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    /// `(tau, lambda)` chains for the sampling engines.
    pub chains: Option<(ChainSet, ChainSet)>,
    /// Engine-specific `key: value` details.
    pub details: Report,
}

impl Reconstruction {
    pub fn tau_summary(&self) -> VarianceSummary {
        VarianceSummary::from_variance(self.tau)
    }

    pub fn lambda_summary(&self) -> VarianceSummary {
        VarianceSummary::from_variance(self.lambda)
    }
}

pub trait Engine: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn reconstruct(&self, y: &ImageGrid, cfg: &RunConfig) -> Result<Reconstruction>;
}

fn field_details(r: &crate::field::FieldReport) -> Report {
    let mut d = Report::new();
    d.push("sweeps", r.sweeps)
        .push("converged", r.converged)
        .push("collapsed", r.collapsed)
        .push("failed", r.failed)
        .push("clamps", r.clamps)
        .push("violations", r.violations)
        .push("tau_rate", r.tau_rate)
        .push("lambda_rate", r.lambda_rate);
    d
}

pub struct EpMc;

impl Engine for EpMc {
    fn name(&self) -> &'static str {
        "ep-mc"
    }

    fn description(&self) -> &'static str {
        "EP with Monte Carlo site estimates and stochastic gradient steps"
    }

    fn reconstruct(&self, y: &ImageGrid, cfg: &RunConfig) -> Result<Reconstruction> {
        let model = cfg.model.build()?;
        let r = epmc_fit(y, &model, &cfg.mc(), &cfg.ep, &cfg.model.field_options())?;
        Ok(Reconstruction {
            tau: r.tau(),
            lambda: r.lambda(),
            details: field_details(&r),
            mean: r.mean,
            variance: Some(r.variance),
            tau_trace: r.tau_trace,
            lambda_trace: r.lambda_trace,
            chains: None,
        })
    }
}

pub struct EpAdmm;

impl Engine for EpAdmm {
    fn name(&self) -> &'static str {
        "ep-admm"
    }

    fn description(&self) -> &'static str {
        "EP with closed-form likelihood sites and augmented-Lagrangian bounds"
    }

    fn reconstruct(&self, y: &ImageGrid, cfg: &RunConfig) -> Result<Reconstruction> {
        let model = cfg.model.build()?;
        let r = epadmm_reconstruct(y, &model, &cfg.admm, &cfg.ep, &cfg.model.field_options())?;
        let mut details = field_details(&r.field);
        details
            .push("final_rms_residual", r.residuals.last().copied().unwrap_or(f64::NAN))
            .push("dual_norm_mean", r.dual_norms.0)
            .push("dual_norm_var", r.dual_norms.1);
        Ok(Reconstruction {
            tau: r.field.tau(),
            lambda: r.field.lambda(),
            details,
            mean: r.field.mean,
            variance: Some(r.field.variance),
            tau_trace: r.field.tau_trace,
            lambda_trace: r.field.lambda_trace,
            chains: None,
        })
    }
}

pub struct EpMcmc;

impl Engine for EpMcmc {
    fn name(&self) -> &'static str {
        "ep-mcmc"
    }

    fn description(&self) -> &'static str {
        "EP with Metropolis-Hastings sampling of the hyperparameter tilted distributions"
    }

    fn reconstruct(&self, y: &ImageGrid, cfg: &RunConfig) -> Result<Reconstruction> {
        let model = cfg.model.build()?;
        let r = run_ep_mcmc(y, &model, &cfg.mh(), &cfg.inner())?;
        let mut details = Report::new();
        let m = r.replications.len() as f64;
        details
            .push("replications", r.replications.len())
            .push("iters", r.tau_chains.n())
            .push(
                "acceptance_tau",
                r.replications.iter().map(|x| x.acceptance_tau).sum::<f64>() / m,
            )
            .push(
                "acceptance_lambda",
                r.replications.iter().map(|x| x.acceptance_lambda).sum::<f64>() / m,
            );
        Ok(Reconstruction {
            tau: r.tau_mean,
            lambda: r.lambda_mean,
            mean: r.mean,
            variance: None,
            tau_trace: r.tau_chains.chain(0).to_vec(),
            lambda_trace: r.lambda_chains.chain(0).to_vec(),
            chains: Some((r.tau_chains, r.lambda_chains)),
            details,
        })
    }
}

pub struct FullMcmc;

impl Engine for FullMcmc {
    fn name(&self) -> &'static str {
        "mcmc"
    }

    fn description(&self) -> &'static str {
        "baseline single-site Metropolis-Hastings over pixels, tau and lambda"
    }

    fn reconstruct(&self, y: &ImageGrid, cfg: &RunConfig) -> Result<Reconstruction> {
        let model = cfg.model.build()?;
        let r = run_full_mcmc(y, &model, &cfg.baseline(), cfg.model.tau0, cfg.model.lambda0)?;
        let mut details = Report::new();
        details
            .push("kept", r.tau.len())
            .push("acceptance_pixel", r.pixel_acceptance)
            .push("acceptance_tau", r.tau_acceptance)
            .push("acceptance_lambda", r.lambda_acceptance)
            .push("final_log_joint", r.final_log_joint);
        let chains = (
            ChainSet::new(vec![r.tau.clone()])?,
            ChainSet::new(vec![r.lambda.clone()])?,
        );
        Ok(Reconstruction {
            tau: r.tau_mean(),
            lambda: r.lambda_mean(),
            mean: r.mean,
            variance: None,
            tau_trace: r.tau,
            lambda_trace: r.lambda,
            chains: Some(chains),
            details,
        })
    }
}

/// Ordered collection of engines looked up by name.
pub struct Registry<T: ?Sized> {
    entries: Vec<Box<T>>,
}

pub trait Named {
    fn key(&self) -> &'static str;
}

impl Named for dyn Engine {
    fn key(&self) -> &'static str {
        self.name()
    }
}

impl Named for dyn ClutterMethod {
    fn key(&self) -> &'static str {
        self.name()
    }
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Adds an entry, replacing one with the same name.
    pub fn register(&mut self, entry: Box<T>) {
        match self.entries.iter().position(|e| e.key() == entry.key()) {
            Some(i) => self.entries[i] = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|e| e.key() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| {
                SepError::Config(format!(
                    "unknown method {name:?}; available: {}",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.key()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|e| e.as_ref())
    }
}

impl Registry<dyn Engine> {
    /// `ep-mc`, `ep-admm`, `ep-mcmc`, `mcmc`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(EpMc));
        r.register(Box::new(EpAdmm));
        r.register(Box::new(EpMcmc));
        r.register(Box::new(FullMcmc));
        r
    }
}

/// A Gaussian approximation method for the clutter problem.
pub trait ClutterMethod: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, data: &[f64], cm: &ClutterModel, cfg: &RunConfig) -> Result<ClutterFit>;
}

pub struct ClutterEp;
pub struct ClutterEpMc;
pub struct ClutterEpAdmm;

impl ClutterMethod for ClutterEp {
    fn name(&self) -> &'static str {
        "ep"
    }

    fn fit(&self, data: &[f64], cm: &ClutterModel, cfg: &RunConfig) -> Result<ClutterFit> {
        ep_clutter(data, cm, &cfg.ep)
    }
}

impl ClutterMethod for ClutterEpMc {
    fn name(&self) -> &'static str {
        "ep-mc"
    }

    fn fit(&self, data: &[f64], cm: &ClutterModel, cfg: &RunConfig) -> Result<ClutterFit> {
        epmc_clutter(data, cm, &cfg.mc(), &cfg.ep)
    }
}

impl ClutterMethod for ClutterEpAdmm {
    fn name(&self) -> &'static str {
        "ep-admm"
    }

    fn fit(&self, data: &[f64], cm: &ClutterModel, cfg: &RunConfig) -> Result<ClutterFit> {
        epadmm_clutter(data, cm, &cfg.admm, &cfg.ep)
    }
}

impl Registry<dyn ClutterMethod> {
    /// `ep`, `ep-mc`, `ep-admm`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClutterEp));
        r.register(Box::new(ClutterEpMc));
        r.register(Box::new(ClutterEpAdmm));
        r
    }
}

pub type EngineRegistry = Registry<dyn Engine>;
pub type ClutterRegistry = Registry<dyn ClutterMethod>;
