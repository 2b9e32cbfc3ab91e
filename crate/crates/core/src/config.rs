//! Run configuration: a flat `section.key = value` document.
//!
//! `#` starts a comment. Unknown keys and malformed values are errors.
//! Engine seeds (`mc.seed`, `mh.seed`, `baseline.seed`) fall back to the
//! global `seed` when unset.

use std::path::{Path, PathBuf};

use crate::baseline::BaselineConfig;
use crate::epadmm::AdmmConfig;
use crate::epcore::EpConfig;
use crate::epmc::McConfig;
use crate::epmcmc::{InnerConfig, MhConfig};
use crate::error::{Result, SepError};
use crate::field::FieldOptions;
use crate::model::{HierarchicalModel, LinearOperatorSpec};
use crate::phantom::PhantomKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    Identity,
    Laplacian,
}

/// Model and starting-point settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Gaussian blur width of the forward map; 0 means identity.
    pub blur_sigma: f64,
    pub regularizer: Regularizer,
    pub rate_tau: f64,
    pub rate_lambda: f64,
    pub tau0: f64,
    pub lambda0: f64,
    pub learn_hyper: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            regularizer: Regularizer::Identity,
            rate_tau: 10.0,
            rate_lambda: 10.0,
            tau0: 0.01,
            lambda0: 0.01,
            learn_hyper: true,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<HierarchicalModel> {
        let forward = if self.blur_sigma == 0.0 {
            LinearOperatorSpec::identity()
        } else {
            LinearOperatorSpec::gaussian_blur(self.blur_sigma)?
        };
        let regularizer = match self.regularizer {
            Regularizer::Identity => LinearOperatorSpec::identity(),
            Regularizer::Laplacian => LinearOperatorSpec::laplacian(),
        };
        HierarchicalModel::new(forward, regularizer, self.rate_tau, self.rate_lambda)
    }

    pub fn field_options(&self) -> FieldOptions {
        FieldOptions {
            tau0: self.tau0,
            lambda0: self.lambda0,
            learn_hyper: self.learn_hyper,
        }
    }
}

/// Synthetic phantom settings used by `gen-phantom` and `compare`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub rows: usize,
    pub cols: usize,
    pub intensity: f64,
    /// Rescale the phantom to this empirical prior precision.
    pub precision: Option<f64>,
    pub noise_sd: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            kind: PhantomKind::Cylinder,
            rows: 64,
            cols: 64,
            intensity: 1.0,
            precision: Some(100.0),
            noise_sd: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub phantom: PhantomConfig,
    pub ep: EpConfig,
    pub mc: McConfig,
    pub admm: AdmmConfig,
    pub mh: MhConfig,
    pub baseline: BaselineConfig,
    pub mc_seed: Option<u64>,
    pub mh_seed: Option<u64>,
    pub baseline_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: "ep-admm".into(),
            seed: 0,
            out_dir: PathBuf::from("."),
            model: ModelConfig::default(),
            phantom: PhantomConfig::default(),
            ep: EpConfig::default(),
            mc: McConfig::default(),
            admm: AdmmConfig::default(),
            mh: MhConfig::default(),
            baseline: BaselineConfig::default(),
            mc_seed: None,
            mh_seed: None,
            baseline_seed: None,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("method", "engine name (ep-mc, ep-admm, ep-mcmc, mcmc)"),
    ("seed", "global seed"),
    ("out_dir", "output directory"),
    ("model.blur_sigma", "Gaussian blur width of G; 0 for identity"),
    ("model.regularizer", "identity or laplacian"),
    ("model.rate_tau", "exponential hyperprior rate of tau"),
    ("model.rate_lambda", "exponential hyperprior rate of lambda"),
    ("model.tau0", "starting tau"),
    ("model.lambda0", "starting lambda"),
    ("model.learn_hyper", "learn tau and lambda (true/false)"),
    ("phantom.kind", "cylinder or four_circles"),
    ("phantom.rows", "phantom rows"),
    ("phantom.cols", "phantom columns"),
    ("phantom.intensity", "value inside the shapes"),
    (
        "phantom.precision",
        "rescale to this prior precision (default 100), or none",
    ),
    ("phantom.noise_sd", "observation noise sd"),
    ("ep.damping", "site damping in (0, 1]"),
    ("ep.tol", "convergence tolerance on site parameters"),
    ("ep.max_sweeps", "sweep cap"),
    ("mc.samples", "Monte Carlo draws per site"),
    ("mc.learning_rate", "gradient step size"),
    ("mc.seed", "EP-MC seed (defaults to seed)"),
    ("admm.rho", "augmented-Lagrangian penalty"),
    ("admm.a", "lower bound on belief means"),
    ("admm.b", "lower bound on belief variances"),
    ("mh.step_tau", "initial random-walk step for tau"),
    ("mh.step_lambda", "initial random-walk step for lambda"),
    ("mh.iters", "draws per replication"),
    ("mh.replications", "independent replications"),
    ("mh.target_acceptance", "step tuner target"),
    ("mh.block", "draws between belief updates"),
    ("mh.tune_every", "draws between step adjustments"),
    ("mh.seed", "EP-MCMC seed (defaults to seed)"),
    ("baseline.iters", "baseline MCMC iterations"),
    ("baseline.burn_in", "discarded leading iterations"),
    ("baseline.thin", "keep every thin-th iteration"),
    ("baseline.pixel_step", "pixel random-walk step"),
    ("baseline.tau_step", "tau random-walk step"),
    ("baseline.lambda_step", "lambda random-walk step"),
    ("baseline.seed", "baseline seed (defaults to seed)"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| SepError::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SepError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Sets one key. Values are validated when the config is used.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "method" => self.method = v.to_string(),
            "seed" => self.seed = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "model.blur_sigma" => self.model.blur_sigma = num(key, v)?,
            "model.regularizer" => {
                self.model.regularizer = match v {
                    "identity" => Regularizer::Identity,
                    "laplacian" => Regularizer::Laplacian,
                    _ => {
                        return Err(SepError::Config(format!(
                            "{key}: expected identity or laplacian, got {v:?}"
                        )))
                    }
                }
            }
            "model.rate_tau" => self.model.rate_tau = num(key, v)?,
            "model.rate_lambda" => self.model.rate_lambda = num(key, v)?,
            "model.tau0" => self.model.tau0 = num(key, v)?,
            "model.lambda0" => self.model.lambda0 = num(key, v)?,
            "model.learn_hyper" => self.model.learn_hyper = flag(key, v)?,
            "phantom.kind" => self.phantom.kind = v.parse()?,
            "phantom.rows" => self.phantom.rows = num(key, v)?,
            "phantom.cols" => self.phantom.cols = num(key, v)?,
            "phantom.intensity" => self.phantom.intensity = num(key, v)?,
            "phantom.precision" => self.phantom.precision = if v == "none" { None } else { Some(num(key, v)?) },
            "phantom.noise_sd" => self.phantom.noise_sd = num(key, v)?,
            "ep.damping" => self.ep.damping = num(key, v)?,
            "ep.tol" => self.ep.tol = num(key, v)?,
            "ep.max_sweeps" => self.ep.max_sweeps = num(key, v)?,
            "mc.samples" => self.mc.samples = num(key, v)?,
            "mc.learning_rate" => self.mc.learning_rate = num(key, v)?,
            "mc.seed" => self.mc_seed = Some(num(key, v)?),
            "admm.rho" => self.admm.rho = num(key, v)?,
            "admm.a" => self.admm.a = num(key, v)?,
            "admm.b" => self.admm.b = num(key, v)?,
            "mh.step_tau" => self.mh.step_tau = num(key, v)?,
            "mh.step_lambda" => self.mh.step_lambda = num(key, v)?,
            "mh.iters" => self.mh.iters = num(key, v)?,
            "mh.replications" => self.mh.replications = num(key, v)?,
            "mh.target_acceptance" => self.mh.target_acceptance = num(key, v)?,
            "mh.block" => self.mh.block = num(key, v)?,
            "mh.tune_every" => self.mh.tune_every = num(key, v)?,
            "mh.seed" => self.mh_seed = Some(num(key, v)?),
            "baseline.iters" => self.baseline.iters = num(key, v)?,
            "baseline.burn_in" => self.baseline.burn_in = num(key, v)?,
            "baseline.thin" => self.baseline.thin = num(key, v)?,
            "baseline.pixel_step" => self.baseline.pixel_step = num(key, v)?,
            "baseline.tau_step" => self.baseline.tau_step = num(key, v)?,
            "baseline.lambda_step" => self.baseline.lambda_step = num(key, v)?,
            "baseline.seed" => self.baseline_seed = Some(num(key, v)?),
            other => return Err(SepError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SepError::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, found {line:?}"),
                });
            };
            self.set(k, v).map_err(|e| SepError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SepError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            seed: self.mc_seed.unwrap_or(self.seed),
            ..self.mc
        }
    }

    pub fn mh(&self) -> MhConfig {
        MhConfig {
            seed: self.mh_seed.unwrap_or(self.seed),
            ..self.mh
        }
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            seed: self.baseline_seed.unwrap_or(self.seed),
            ..self.baseline
        }
    }

    pub fn inner(&self) -> InnerConfig {
        InnerConfig {
            admm: self.admm,
            ep: self.ep,
            opts: self.model.field_options(),
        }
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.ep.validate()?;
        self.mc().validate()?;
        self.admm.validate()?;
        self.mh().validate()?;
        self.baseline().validate()?;
        for (name, v) in [("model.tau0", self.model.tau0), ("model.lambda0", self.model.lambda0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SepError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
