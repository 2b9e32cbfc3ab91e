//! EP with closed-form Gaussian tilted moments and augmented-Lagrangian
//! corrections that keep belief means and variances inside bounds
//! `m >= a`, `v >= b`.

use crate::epcore::{converged, ep_sweep, row_major_schedule, EpConfig, EpState, Gaussian, SweepStats};
use crate::error::{Result, SepError};
use crate::field::{block_tilted_moments, count_violations, FieldOptions, FieldReport, FieldState};
use crate::model::{apply_operator, normal_pdf, HierarchicalModel, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.0,
            a: 0.0,
            b: 1e-6,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(SepError::Config(format!(
                "admm.rho must be nonnegative, got {}",
                self.rho
            )));
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(SepError::Config(format!("admm.b must be positive, got {}", self.b)));
        }
        if !self.a.is_finite() {
            return Err(SepError::Config("admm.a must be finite".into()));
        }
        Ok(())
    }
}

/// Per-pixel duals plus the penalty and bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub dual_mean: Vec<f64>,
    pub dual_var: Vec<f64>,
    pub rho: f64,
    pub bound_a: f64,
    pub bound_b: f64,
}

impl AdmmState {
    pub fn new(n: usize, cfg: &AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dual_mean: vec![0.0; n],
            dual_var: vec![0.0; n],
            rho: cfg.rho,
            bound_a: cfg.a,
            bound_b: cfg.b,
        })
    }

    pub fn dual_norms(&self) -> (f64, f64) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (norm(&self.dual_mean), norm(&self.dual_var))
    }
}

/// `Z_x = N(y; g m_-, v_- g^2 + lambda)` with its predictive mean and variance.
pub fn closed_form_zx(y: f64, g: f64, m_cav: f64, v_cav: f64, lambda: f64) -> Result<(f64, f64, f64)> {
    if !(v_cav > 0.0) || !(lambda > 0.0) {
        return Err(SepError::Domain(format!(
            "need v_- > 0 and lambda > 0, got {v_cav}, {lambda}"
        )));
    }
    let m_y = g * m_cav;
    let v_y = v_cav * g * g + lambda;
    if !(v_y > 0.0) || !v_y.is_finite() {
        return Err(SepError::Domain(format!("predictive variance {v_y} is not positive")));
    }
    Ok((normal_pdf(y, m_y, v_y), m_y, v_y))
}

/// Result of one constrained moment update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmUpdate {
    pub mean: f64,
    pub var: f64,
    /// The variance had to be raised to `bound_b`.
    pub clamped: bool,
}

/// Conjugate tilted moments plus the dual and penalty corrections for `pixel`.
pub fn admm_update_site(
    y: f64,
    g: f64,
    m_cav: f64,
    v_cav: f64,
    lambda: f64,
    admm: &AdmmState,
    pixel: usize,
) -> Result<AdmmUpdate> {
    if !(v_cav > 0.0) || !(lambda > 0.0) {
        return Err(SepError::Domain(format!(
            "need v_- > 0 and lambda > 0, got {v_cav}, {lambda}"
        )));
    }
    let s = v_cav * g * g + lambda;
    let mean = m_cav + v_cav * g * (y - g * m_cav) / s + admm.dual_mean[pixel] + admm.rho * (m_cav - admm.bound_a);
    let var = v_cav * lambda / s + admm.dual_var[pixel] + admm.rho * (v_cav - admm.bound_b);
    if var < admm.bound_b || var.is_nan() {
        return Ok(AdmmUpdate {
            mean,
            var: admm.bound_b,
            clamped: true,
        });
    }
    Ok(AdmmUpdate {
        mean,
        var,
        clamped: false,
    })
}

/// Dual ascent `alpha += rho (m - a)`, `beta += rho (v - b)` at `pixel`.
pub fn admm_dual_update(admm: &mut AdmmState, m_new: f64, v_new: f64, pixel: usize) {
    admm.dual_mean[pixel] += admm.rho * (m_new - admm.bound_a);
    admm.dual_var[pixel] += admm.rho * (v_new - admm.bound_b);
}

/// EP-ADMM run summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpAdmmReport {
    pub field: FieldReport,
    /// RMS of `y - G mean` (full forward operator) after each sweep.
    pub residuals: Vec<f64>,
    pub dual_norms: (f64, f64),
}

/// One EP-ADMM pass over all pixel sites at fixed `(tau, lambda)`.
/// Returns the sweep statistics and the number of variance clamps.
pub fn admm_sweep(
    field: &mut FieldState,
    admm: &mut AdmmState,
    tau: f64,
    lambda: f64,
    damping: f64,
) -> Result<(SweepStats, usize)> {
    let schedule = row_major_schedule(field.ep.num_sites());
    let mut clamps = 0;
    let geom = &field.geom;
    let mut hook = |s: usize, cavity: Gaussian, state: &EpState| -> Result<Gaussian> {
        let k = s / 2;
        if FieldState::is_prior_site(s) {
            let t = geom.prior_tilted(state, k, cavity, tau);
            if t.var < admm.bound_b {
                clamps += 1;
                return Ok(Gaussian::new(t.mean, admm.bound_b));
            }
            return Ok(t);
        }
        let u = admm_update_site(geom.y(k), geom.gain(k), cavity.mean, cavity.var, lambda, admm, k)?;
        clamps += u.clamped as usize;
        admm_dual_update(admm, u.mean, u.var, k);
        Ok(Gaussian::new(u.mean, u.var))
    };
    let stats = ep_sweep(&mut field.ep, &schedule, &mut hook, damping)?;
    Ok((stats, clamps))
}

/// Moment-matches both exponential beliefs to their tilted block
/// distributions under the current field belief.
pub(crate) fn match_hyper_moments(field: &mut FieldState) -> Result<()> {
    let n = field.len();
    let (mean, _) = block_tilted_moments(n, field.prior_statistic(), field.tau.cavity_rate()?)?;
    field.tau.set_rate(1.0 / mean)?;
    let (mean, _) = block_tilted_moments(n, field.noise_statistic(), field.lambda.cavity_rate()?)?;
    field.lambda.set_rate(1.0 / mean)?;
    Ok(())
}

fn rms_residual(y: &ImageGrid, model: &HierarchicalModel, mean: &ImageGrid) -> Result<f64> {
    let gm = apply_operator(&model.forward, mean)?;
    let r = y.zip_with(&gm, |a, b| a - b)?;
    Ok((r.sum_squares() / r.len() as f64).sqrt())
}

/// Runs EP-ADMM on the image field. The reconstruction is the mean grid.
pub fn epadmm_reconstruct(
    y: &ImageGrid,
    model: &HierarchicalModel,
    admm_cfg: &AdmmConfig,
    ep_cfg: &EpConfig,
    opts: &FieldOptions,
) -> Result<EpAdmmReport> {
    ep_cfg.validate()?;
    let mut field = FieldState::new(y, model, opts.tau0, opts.lambda0)?;
    let mut admm = AdmmState::new(field.len(), admm_cfg)?;
    let mut report = FieldReport::start(&field)?;
    let mut residuals = Vec::new();
    for _ in 0..ep_cfg.max_sweeps {
        let prev = field.ep.clone();
        let (prev_tau, prev_lambda) = (field.tau.rate(), field.lambda.rate());
        let (tau, lambda) = (field.tau.mean(), field.lambda.mean());
        let (stats, clamps) = admm_sweep(&mut field, &mut admm, tau, lambda, ep_cfg.damping)?;
        report.sweeps += 1;
        report.collapsed += stats.collapsed;
        report.failed += stats.failed;
        report.clamps += clamps;
        if opts.learn_hyper {
            match_hyper_moments(&mut field)?;
        }
        report.violations += count_violations(&field, admm.bound_b);
        report.tau_trace.push(field.tau.mean());
        report.lambda_trace.push(field.lambda.mean());
        residuals.push(rms_residual(y, model, &field.mean_grid()?)?);
        let hyper_change = (field.tau.rate() - prev_tau)
            .abs()
            .max((field.lambda.rate() - prev_lambda).abs());
        report.max_change.push(stats.max_change.max(hyper_change));
        if converged(&prev, &field.ep, ep_cfg.tol) && hyper_change < ep_cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.finish(&field)?;
    Ok(EpAdmmReport {
        field: report,
        residuals,
        dual_norms: admm.dual_norms(),
    })
}
