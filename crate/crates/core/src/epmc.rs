//! EP with Monte Carlo tilted moments.
//!
//! Site normalizers are estimated by averaging the exact factor over draws
//! from the exponential cavity. During a fit the hyperparameter rates move by
//! a gradient step on the self-normalized estimate of `d log Z / d alpha`,
//! and pixel beliefs move toward the self-normalized tilted moments.
//!
//! Draws are common random numbers: one fixed set of standard variates per
//! run, rescaled to the current proposal. The EP map is then deterministic
//! and a fixed point of the exact EP equations stays a fixed point.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::epcore::{converged, ep_sweep, row_major_schedule, EpConfig, EpState, Gaussian};
use crate::error::{Result, SepError};
use crate::field::{block_log_factor, count_violations, FieldOptions, FieldReport, FieldState};
use crate::model::{log_exponential, normal_pdf, HierarchicalModel, ImageGrid};
use crate::rng::{stream, tags};

/// Smallest rate any exponential belief may take.
pub const RATE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 1024,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(SepError::Config("mc.samples must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(SepError::Config(format!(
                "mc.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// `K` draws from `Exp(rate)` on the normalizer stream of `cfg.seed`.
pub fn exponential_draws(rate: f64, cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(rate > 0.0) {
        return Err(SepError::Domain(format!("cavity rate must be positive, got {rate}")));
    }
    let mut rng = stream(cfg.seed, tags::NORMALIZER);
    Ok((0..cfg.samples)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            e / rate
        })
        .collect())
}

/// Estimate of `int N(lx | 0, tau) Exp(tau | cavity_rate) dtau`.
pub fn mc_normalizer_tau(lx: f64, cavity_rate: f64, cfg: &McConfig) -> Result<f64> {
    let draws = exponential_draws(cavity_rate, cfg)?;
    Ok(draws.iter().map(|&t| normal_pdf(lx, 0.0, t)).sum::<f64>() / draws.len() as f64)
}

/// Estimate of `int N(y | gx, lambda) Exp(lambda | cavity_rate) dlambda`.
pub fn mc_normalizer_lambda(y: f64, gx: f64, cavity_rate: f64, cfg: &McConfig) -> Result<f64> {
    let draws = exponential_draws(cavity_rate, cfg)?;
    Ok(draws.iter().map(|&l| normal_pdf(y, gx, l)).sum::<f64>() / draws.len() as f64)
}

/// Sample mean of the draws.
pub fn grad_log_z_rate(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(SepError::Empty("no samples for the rate gradient".into()));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// `alpha_- + v * zeta`, floored at [`RATE_FLOOR`].
pub fn update_rate(cavity_rate: f64, cavity_variance: f64, zeta: f64) -> f64 {
    let next = cavity_rate + cavity_variance * zeta;
    if next.is_nan() || next < RATE_FLOOR {
        RATE_FLOOR
    } else {
        next
    }
}

/// Self-normalized weighted mean `sum w g / sum w`.
pub fn snis_gradient(weights: &[f64], grads: &[f64]) -> Result<f64> {
    if weights.len() != grads.len() {
        return Err(SepError::Shape(format!(
            "{} weights for {} gradients",
            weights.len(),
            grads.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(SepError::Domain(
            "importance weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(SepError::DegenerateWeights);
    }
    Ok(weights.iter().zip(grads).map(|(w, g)| w * g).sum::<f64>() / total)
}

/// Weights from log weights, scaled so the largest is 1.
pub fn weights_from_log(log_w: &[f64]) -> Result<Vec<f64>> {
    let peak = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(SepError::DegenerateWeights);
    }
    Ok(log_w.iter().map(|l| (l - peak).exp()).collect())
}

pub fn gradient_step(omega: f64, lr: f64, g: f64) -> f64 {
    omega + lr * g
}

/// Standard normal draws with exact sample mean 0 and variance 1 when `k >= 2`.
pub(crate) fn standardized_normals<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
    if k >= 2 {
        let mean = z.iter().sum::<f64>() / k as f64;
        let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64).sqrt();
        if sd > 0.0 {
            z.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    z
}

/// Self-normalized tilted mean and variance under draws `xs` with log weights.
pub(crate) fn snis_moments(xs: &[f64], log_w: &[f64]) -> Result<(f64, f64)> {
    let w = weights_from_log(log_w)?;
    let mean = snis_gradient(&w, xs)?;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    Ok((mean, snis_gradient(&w, &sq)?))
}

/// One gradient step of an exponential rate toward the tilted distribution
/// `exp(log_factor) Exp(. | cavity_rate)`, with `unit` standard exponential
/// variates as common random numbers. Returns the new rate and whether a
/// bound was enforced.
pub(crate) fn rate_step(
    rate: f64,
    cavity_rate: f64,
    unit: &[f64],
    log_factor: impl Fn(f64) -> f64,
) -> Result<(f64, bool)> {
    let draws: Vec<f64> = unit.iter().map(|e| e / rate).collect();
    let log_w: Vec<f64> = draws
        .iter()
        .map(|&t| Ok(log_factor(t) + log_exponential(t, cavity_rate)? - log_exponential(t, rate)?))
        .collect::<Result<_>>()?;
    let w = weights_from_log(&log_w)?;
    let grads: Vec<f64> = draws.iter().map(|t| 1.0 / rate - t).collect();
    let zeta = snis_gradient(&w, &grads)?;
    let next = update_rate(rate, rate * rate, zeta);
    // A single step may at most halve the rate.
    if next < 0.5 * rate {
        Ok((0.5 * rate, true))
    } else {
        Ok((next, next == RATE_FLOOR))
    }
}

/// Runs EP-MC on the image field.
pub fn epmc_fit(
    y: &ImageGrid,
    model: &HierarchicalModel,
    cfg: &McConfig,
    ep_cfg: &EpConfig,
    opts: &FieldOptions,
) -> Result<FieldReport> {
    cfg.validate()?;
    ep_cfg.validate()?;
    if cfg.learning_rate > 1.0 {
        return Err(SepError::Config(
            "mc.learning_rate above 1 can make variances negative".into(),
        ));
    }
    let mut field = FieldState::new(y, model, opts.tau0, opts.lambda0)?;
    let z = standardized_normals(&mut stream(cfg.seed, tags::EPMC_PIXELS), cfg.samples);
    let unit: Vec<f64> = {
        let mut rng = stream(cfg.seed, tags::EPMC_HYPER);
        (0..cfg.samples).map(|_| -> f64 { Exp1.sample(&mut rng) }).collect()
    };
    let schedule = row_major_schedule(field.ep.num_sites());
    let mut report = FieldReport::start(&field)?;
    let n = field.len();
    let lr = cfg.learning_rate;

    for _ in 0..ep_cfg.max_sweeps {
        let prev = field.ep.clone();
        let (prev_tau, prev_lambda) = (field.tau.rate(), field.lambda.rate());
        let tau_hat = field.tau.mean();
        let lambda_hat = field.lambda.mean();
        let mut hook = |s: usize, cavity: Gaussian, state: &EpState| -> Result<Gaussian> {
            let k = s / 2;
            if FieldState::is_prior_site(s) {
                return Ok(field.geom.prior_tilted(state, k, cavity, tau_hat));
            }
            let q = state.belief(k);
            let site = state.site(s);
            let (yk, gk) = (field.geom.y(k), field.geom.gain(k));
            let sd = q.var.sqrt();
            // Proposal is the current belief; weight = exact factor / site, a
            // quadratic in the standard variate z up to a constant.
            let r = yk - gk * q.mean;
            let a2 = 0.5 * sd * sd * (site.precision - gk * gk / lambda_hat);
            let a1 = sd * (r * gk / lambda_hat - site.shift + site.precision * q.mean);
            let log_w = |zi: f64| (a2 * zi + a1) * zi;
            let peak = z.iter().map(|&zi| log_w(zi)).fold(f64::NEG_INFINITY, f64::max);
            if !peak.is_finite() {
                return Err(SepError::DegenerateWeights);
            }
            let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
            for &zi in &z {
                let w = (log_w(zi) - peak).exp();
                w0 += w;
                w1 += w * zi;
                w2 += w * zi * zi;
            }
            let ez = w1 / w0;
            let mu_t = q.mean + sd * ez;
            let var_t = q.var * (w2 / w0 - ez * ez).max(0.0);
            let mean = gradient_step(q.mean, lr, mu_t - q.mean);
            let var = gradient_step(q.var, lr, var_t - q.var);
            Ok(Gaussian::new(mean, var))
        };
        let stats = ep_sweep(&mut field.ep, &schedule, &mut hook, ep_cfg.damping)?;
        report.sweeps += 1;
        report.collapsed += stats.collapsed;
        report.failed += stats.failed;

        if opts.learn_hyper {
            let q_stat = field.prior_statistic();
            let cav = field.tau.cavity_rate()?;
            let (rate, clamped) = rate_step(field.tau.rate(), cav, &unit, |t| block_log_factor(t, n, q_stat))?;
            field.tau.set_rate(rate)?;
            report.clamps += clamped as usize;

            let r_stat = field.noise_statistic();
            let cav = field.lambda.cavity_rate()?;
            let (rate, clamped) = rate_step(field.lambda.rate(), cav, &unit, |t| block_log_factor(t, n, r_stat))?;
            field.lambda.set_rate(rate)?;
            report.clamps += clamped as usize;
        }
        report.violations += count_violations(&field, 0.0);
        report.tau_trace.push(field.tau.mean());
        report.lambda_trace.push(field.lambda.mean());
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
    Ok(report)
}
