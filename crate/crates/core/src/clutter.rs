//! One-dimensional clutter problem: `y_i ~ (1 - w) N(theta, 1) + w N(0, clutter_var)`
//! with prior `theta ~ N(0, prior_var)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::epadmm::{AdmmConfig, AdmmState};
use crate::epcore::{converged, ep_sweep, row_major_schedule, EpConfig, EpState, Gaussian, NaturalGaussian};
use crate::epmc::{snis_moments, standardized_normals, McConfig};
use crate::error::{Result, SepError};
use crate::model::{log_normal_pdf, LN_2PI};
use crate::rng::{stream, tags};

/// Largest data set the exact enumeration accepts.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterModel {
    pub w: f64,
    pub prior_var: f64,
    pub clutter_var: f64,
    pub dim: usize,
}

impl Default for ClutterModel {
    fn default() -> Self {
        Self {
            w: 0.5,
            prior_var: 100.0,
            clutter_var: 10.0,
            dim: 1,
        }
    }
}

impl ClutterModel {
    pub fn new(w: f64) -> Result<Self> {
        let cm = Self {
            w,
            ..Default::default()
        };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(SepError::Domain(format!(
                "clutter ratio must lie in [0, 1], got {}",
                self.w
            )));
        }
        if !(self.prior_var > 0.0) || !(self.clutter_var > 0.0) {
            return Err(SepError::Domain("clutter variances must be positive".into()));
        }
        if self.dim != 1 {
            return Err(SepError::Config(
                "only the one-dimensional clutter problem is supported".into(),
            ));
        }
        Ok(())
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `log[(1 - w) N(y; theta, 1) + w N(y; 0, clutter_var)]`.
pub fn clutter_loglik(y: f64, theta: f64, cm: &ClutterModel) -> f64 {
    log_add(
        ln_or_neg_inf(1.0 - cm.w) + log_normal_pdf(y, theta, 1.0),
        ln_or_neg_inf(cm.w) + log_normal_pdf(y, 0.0, cm.clutter_var),
    )
}

/// Draws `n` observations around `theta`.
pub fn generate_clutter_data(n: usize, theta: f64, cm: &ClutterModel, seed: u64) -> Result<Vec<f64>> {
    cm.validate()?;
    let mut rng = stream(seed, tags::CLUTTER_DATA);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let z: f64 = StandardNormal.sample(&mut rng);
            if u < cm.w {
                cm.clutter_var.sqrt() * z
            } else {
                theta + z
            }
        })
        .collect())
}

/// `points` evenly spaced thetas over the data mean +- 6 prior sd.
pub fn default_grid(data: &[f64], cm: &ClutterModel, points: usize) -> Vec<f64> {
    let centre = if data.is_empty() {
        0.0
    } else {
        data.iter().sum::<f64>() / data.len() as f64
    };
    let half = 6.0 * cm.prior_var.sqrt();
    let points = points.max(2);
    (0..points)
        .map(|i| centre - half + 2.0 * half * i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub log_z: f64,
}

/// Log unnormalized posterior `log p(theta) + sum log p(y_i | theta)`.
pub fn log_unnormalized_posterior(theta: f64, data: &[f64], cm: &ClutterModel) -> f64 {
    log_normal_pdf(theta, 0.0, cm.prior_var) + data.iter().map(|&y| clutter_loglik(y, theta, cm)).sum::<f64>()
}

/// Exact posterior by expanding the product of mixtures into `2^n` Gaussians.
pub fn exact_posterior(data: &[f64], cm: &ClutterModel, grid: &[f64]) -> Result<ExactPosterior> {
    cm.validate()?;
    let n = data.len();
    if n > ENUMERATION_CAP {
        return Err(SepError::EnumerationGuard {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let v0 = cm.prior_var;
    let log_clutter: Vec<f64> = data
        .iter()
        .map(|&y| ln_or_neg_inf(cm.w) + log_normal_pdf(y, 0.0, cm.clutter_var))
        .collect();
    let log_signal = ln_or_neg_inf(1.0 - cm.w);
    let mut log_z = f64::NEG_INFINITY;
    let mut comps: Vec<(f64, f64, f64)> = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let (mut k, mut sy, mut syy, mut lw) = (0usize, 0.0, 0.0, 0.0);
        for (i, &y) in data.iter().enumerate() {
            if mask >> i & 1 == 1 {
                k += 1;
                sy += y;
                syy += y * y;
                lw += log_signal;
            } else {
                lw += log_clutter[i];
            }
        }
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let kf = k as f64;
        // Marginal of the signal group under the prior.
        let lm = -0.5 * kf * LN_2PI - 0.5 * (1.0 + kf * v0).ln() - 0.5 * (syy - sy * sy * v0 / (1.0 + kf * v0));
        let prec = 1.0 / v0 + kf;
        let lw = lw + lm;
        log_z = log_add(log_z, lw);
        comps.push((lw, sy / prec, 1.0 / prec));
    }
    let (mut mean, mut second) = (0.0, 0.0);
    for &(lw, m, v) in &comps {
        let p = (lw - log_z).exp();
        mean += p * m;
        second += p * (v + m * m);
    }
    let density = grid
        .iter()
        .map(|&t| (log_unnormalized_posterior(t, data, cm) - log_z).exp())
        .collect();
    Ok(ExactPosterior {
        grid: grid.to_vec(),
        density,
        mean,
        var: second - mean * mean,
        log_z,
    })
}

/// Posterior on a grid normalized by Simpson quadrature, for data sets
/// beyond the enumeration cap. The grid must be evenly spaced.
pub fn quadrature_posterior(data: &[f64], cm: &ClutterModel, grid: &[f64]) -> Result<ExactPosterior> {
    cm.validate()?;
    if grid.len() < 3 || grid.len().is_multiple_of(2) {
        return Err(SepError::Shape(
            "quadrature grid needs an odd number (>= 3) of points".into(),
        ));
    }
    let h = grid[1] - grid[0];
    let logs: Vec<f64> = grid.iter().map(|&t| log_unnormalized_posterior(t, data, cm)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let simpson = |f: &dyn Fn(usize) -> f64| {
        let last = grid.len() - 1;
        (0..=last)
            .map(|i| {
                let c = if i == 0 || i == last {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * f(i)
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    let p = |i: usize| (logs[i] - peak).exp();
    let z = simpson(&p);
    let mean = simpson(&|i| grid[i] * p(i)) / z;
    let var = simpson(&|i| (grid[i] - mean).powi(2) * p(i)) / z;
    let log_z = z.ln() + peak;
    let density = logs.iter().map(|l| (l - log_z).exp()).collect();
    Ok(ExactPosterior {
        grid: grid.to_vec(),
        density,
        mean,
        var,
        log_z,
    })
}

/// Normalizer, mean and variance of `N(theta; m, v) [(1 - w) N(y; theta, 1) + w N(y; 0, c)]`.
pub fn clutter_tilted_moments(y: f64, cavity: Gaussian, cm: &ClutterModel) -> Result<(f64, f64, f64)> {
    let (m, v) = (cavity.mean, cavity.var);
    if !(v > 0.0) {
        return Err(SepError::Domain(format!("cavity variance must be positive, got {v}")));
    }
    let ls = ln_or_neg_inf(1.0 - cm.w) + log_normal_pdf(y, m, v + 1.0);
    let lc = ln_or_neg_inf(cm.w) + log_normal_pdf(y, 0.0, cm.clutter_var);
    let lz = log_add(ls, lc);
    let r = (ls - lz).exp();
    let m1 = m + v * (y - m) / (v + 1.0);
    let v1 = v / (v + 1.0);
    let mean = r * m1 + (1.0 - r) * m;
    let var = r * v1 + (1.0 - r) * v + r * (1.0 - r) * (m1 - m) * (m1 - m);
    Ok((lz.exp(), mean, var))
}

/// Gaussian approximation to the clutter posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterFit {
    pub mean: f64,
    pub var: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub collapsed: usize,
    pub failed: usize,
    /// Final site `(mean, variance)` per observation; variance may be negative or infinite.
    pub sites: Vec<(f64, f64)>,
    pub clamps: usize,
}

impl ClutterFit {
    pub fn density(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter()
            .map(|&t| log_normal_pdf(t, self.mean, self.var).exp())
            .collect()
    }
}

fn run_clutter<H>(data: &[f64], cm: &ClutterModel, ep_cfg: &EpConfig, mut hook: H) -> Result<ClutterFit>
where
    H: FnMut(usize, Gaussian, &EpState) -> Result<Gaussian>,
{
    cm.validate()?;
    ep_cfg.validate()?;
    if data.is_empty() {
        return Err(SepError::Empty("clutter data set is empty".into()));
    }
    let mut state = EpState::new(
        vec![NaturalGaussian::from_moments(0.0, cm.prior_var)],
        vec![0; data.len()],
    )?;
    let schedule = row_major_schedule(data.len());
    let mut fit = ClutterFit {
        mean: 0.0,
        var: 0.0,
        sweeps: 0,
        converged: false,
        collapsed: 0,
        failed: 0,
        sites: vec![],
        clamps: 0,
    };
    for _ in 0..ep_cfg.max_sweeps {
        let prev = state.clone();
        let stats = ep_sweep(&mut state, &schedule, &mut hook, ep_cfg.damping)?;
        fit.sweeps += 1;
        fit.collapsed += stats.collapsed;
        fit.failed += stats.failed;
        if stats.collapsed + stats.failed == data.len() {
            return Err(SepError::Numeric("every clutter site was skipped in a sweep".into()));
        }
        if converged(&prev, &state, ep_cfg.tol) {
            fit.converged = true;
            break;
        }
    }
    let b = state.belief(0);
    fit.mean = b.mean;
    fit.var = b.var;
    fit.sites = state.sites().iter().map(|s| (s.mean(), s.variance())).collect();
    Ok(fit)
}

/// Classic EP with closed-form tilted moments.
pub fn ep_clutter(data: &[f64], cm: &ClutterModel, ep_cfg: &EpConfig) -> Result<ClutterFit> {
    run_clutter(data, cm, ep_cfg, |s, cavity, _| {
        let (_, mean, var) = clutter_tilted_moments(data[s], cavity, cm)?;
        Ok(Gaussian::new(mean, var))
    })
}

/// EP with self-normalized importance-sampled tilted moments.
///
/// The proposal is the defensive mixture `(1 - w) S + w C` of the signal
/// component `S` (cavity times `N(y; theta, 1)`, normalized) and the cavity
/// `C`. The first `round((1 - w) K)` of one fixed set of standardized normal
/// variates map through `S`, the rest through `C`; weights use the mixture
/// density, so they stay bounded and are constant when `w = 0`.
pub fn epmc_clutter(data: &[f64], cm: &ClutterModel, mc: &McConfig, ep_cfg: &EpConfig) -> Result<ClutterFit> {
    mc.validate()?;
    let z = standardized_normals(&mut stream(mc.seed, tags::CLUTTER_MC), mc.samples);
    let k_signal = (((1.0 - cm.w) * mc.samples as f64).round() as usize).min(mc.samples);
    let (ln_s, ln_c) = (ln_or_neg_inf(1.0 - cm.w), ln_or_neg_inf(cm.w));
    run_clutter(data, cm, ep_cfg, |s, cavity, _| {
        let y = data[s];
        let (m, v) = (cavity.mean, cavity.var);
        let ms = m + v * (y - m) / (v + 1.0);
        let vs = v / (v + 1.0);
        let xs: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, zi)| {
                if i < k_signal {
                    ms + vs.sqrt() * zi
                } else {
                    m + v.sqrt() * zi
                }
            })
            .collect();
        let log_w: Vec<f64> = xs
            .iter()
            .map(|&t| {
                let proposal = log_add(ln_s + log_normal_pdf(t, ms, vs), ln_c + log_normal_pdf(t, m, v));
                log_normal_pdf(t, m, v) + clutter_loglik(y, t, cm) - proposal
            })
            .collect();
        let (mean, var) = snis_moments(&xs, &log_w)?;
        // One effective draw carries no spread; keep the signal component's.
        Ok(Gaussian::new(mean, if var > 0.0 { var } else { vs }))
    })
}

/// EP with the augmented-Lagrangian correction on the site moments.
pub fn epadmm_clutter(data: &[f64], cm: &ClutterModel, admm_cfg: &AdmmConfig, ep_cfg: &EpConfig) -> Result<ClutterFit> {
    let mut admm = AdmmState::new(data.len(), admm_cfg)?;
    let mut clamps = 0;
    let mut fit = run_clutter(data, cm, ep_cfg, |s, cavity, _| {
        let (_, tm, tv) = clutter_tilted_moments(data[s], cavity, cm)?;
        let mean = tm + admm.dual_mean[s] + admm.rho * (cavity.mean - admm.bound_a);
        let mut var = tv + admm.dual_var[s] + admm.rho * (cavity.var - admm.bound_b);
        if !(var >= admm.bound_b) {
            var = admm.bound_b;
            clamps += 1;
        }
        crate::epadmm::admm_dual_update(&mut admm, mean, var, s);
        Ok(Gaussian::new(mean, var))
    })?;
    fit.clamps = clamps;
    Ok(fit)
}
