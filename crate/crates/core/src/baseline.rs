//! Baseline full Metropolis-Hastings over `(x, tau, lambda)`.
//!
//! Each iteration scans the pixels in row-major order with single-site
//! random-walk proposals, then updates `tau` and `lambda` with random walks
//! reflected at zero.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SepError};
use crate::model::{log_exponential, HierarchicalModel, ImageGrid, SparseOperator};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub pixel_step: f64,
    pub tau_step: f64,
    pub lambda_step: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            burn_in: 500,
            thin: 10,
            pixel_step: 0.1,
            tau_step: 5e-4,
            lambda_step: 5e-4,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.thin == 0 {
            return Err(SepError::Config(
                "baseline.iters and baseline.thin must be at least 1".into(),
            ));
        }
        if self.burn_in >= self.iters {
            return Err(SepError::Config(format!(
                "baseline.burn_in ({}) must be below baseline.iters ({})",
                self.burn_in, self.iters
            )));
        }
        for (name, v) in [
            ("pixel_step", self.pixel_step),
            ("tau_step", self.tau_step),
            ("lambda_step", self.lambda_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SepError::Config(format!("baseline.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of retained samples.
    pub fn kept(&self) -> usize {
        (self.iters - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub mean: ImageGrid,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub pixel_acceptance: f64,
    pub tau_acceptance: f64,
    pub lambda_acceptance: f64,
    /// `log_joint` at the final state.
    pub final_log_joint: f64,
}

impl BaselineResult {
    pub fn tau_mean(&self) -> f64 {
        self.tau.iter().sum::<f64>() / self.tau.len() as f64
    }

    pub fn lambda_mean(&self) -> f64 {
        self.lambda.iter().sum::<f64>() / self.lambda.len() as f64
    }
}

fn scale_log_density(theta: f64, n: usize, ss: f64, rate: f64) -> f64 {
    if !(theta > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * n as f64 * theta.ln() - 0.5 * ss / theta + log_exponential(theta, rate).unwrap_or(f64::NAN)
}

fn reflected_walk<R: Rng>(current: f64, step: f64, log_target: impl Fn(f64) -> f64, rng: &mut R) -> (f64, bool) {
    let z: f64 = StandardNormal.sample(rng);
    let proposal = (current + step * z).abs();
    let delta = log_target(proposal) - log_target(current);
    let u: f64 = rng.random();
    if delta > u.ln() {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Runs the sampler from `x = y`, `tau = tau0`, `lambda = lambda0`.
#[allow(clippy::needless_range_loop)]
pub fn run_full_mcmc(
    y: &ImageGrid,
    model: &HierarchicalModel,
    cfg: &BaselineConfig,
    tau0: f64,
    lambda0: f64,
) -> Result<BaselineResult> {
    cfg.validate()?;
    if !(tau0 > 0.0) || !(lambda0 > 0.0) {
        return Err(SepError::Config("initial tau and lambda must be positive".into()));
    }
    let (rows, cols) = y.shape();
    let n = rows * cols;
    let g = SparseOperator::assemble(&model.forward, rows, cols)?;
    let l = SparseOperator::assemble(&model.regularizer, rows, cols)?;
    let mut rng = stream(cfg.seed, tags::BASELINE);
    let ys = y.values();
    let mut x = ys.to_vec();
    let gx = g.apply(&x);
    let mut resid: Vec<f64> = ys.iter().zip(&gx).map(|(a, b)| a - b).collect();
    let mut lx = l.apply(&x);
    let (mut tau, mut lambda) = (tau0, lambda0);
    let mut sum_x = vec![0.0; n];
    let (mut tau_chain, mut lambda_chain) = (Vec::new(), Vec::new());
    let (mut acc_px, mut acc_tau, mut acc_lambda) = (0usize, 0usize, 0usize);

    for t in 0..cfg.iters {
        for k in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let d = cfg.pixel_step * z;
            let mut delta = 0.0;
            for &(r, w) in g.column(k) {
                let old = resid[r];
                let new = old - w * d;
                delta -= (new * new - old * old) / (2.0 * lambda);
            }
            for &(r, w) in l.column(k) {
                let old = lx[r];
                let new = old + w * d;
                delta -= (new * new - old * old) / (2.0 * tau);
            }
            let u: f64 = rng.random();
            if delta > u.ln() {
                x[k] += d;
                for &(r, w) in g.column(k) {
                    resid[r] -= w * d;
                }
                for &(r, w) in l.column(k) {
                    lx[r] += w * d;
                }
                acc_px += 1;
            }
        }
        let ss_prior: f64 = lx.iter().map(|v| v * v).sum();
        let (next, a) = reflected_walk(
            tau,
            cfg.tau_step,
            |v| scale_log_density(v, n, ss_prior, model.hyper_rate_tau),
            &mut rng,
        );
        tau = next;
        acc_tau += a as usize;
        let ss_noise: f64 = resid.iter().map(|v| v * v).sum();
        let (next, a) = reflected_walk(
            lambda,
            cfg.lambda_step,
            |v| scale_log_density(v, n, ss_noise, model.hyper_rate_lambda),
            &mut rng,
        );
        lambda = next;
        acc_lambda += a as usize;

        if t >= cfg.burn_in && (t - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
            for (s, v) in sum_x.iter_mut().zip(&x) {
                *s += v;
            }
            tau_chain.push(tau);
            lambda_chain.push(lambda);
        }
    }
    let kept = tau_chain.len() as f64;
    let mean = ImageGrid::new(rows, cols, sum_x.iter().map(|s| s / kept).collect())?;
    let x_grid = ImageGrid::new(rows, cols, x)?;
    let final_log_joint = crate::model::log_joint(y, &x_grid, lambda, tau, model)?;
    let iters = cfg.iters as f64;
    Ok(BaselineResult {
        mean,
        tau: tau_chain,
        lambda: lambda_chain,
        pixel_acceptance: acc_px as f64 / (iters * n as f64),
        tau_acceptance: acc_tau as f64 / iters,
        lambda_acceptance: acc_lambda as f64 / iters,
        final_log_joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearOperatorSpec;

    #[test]
    fn kept_count_matches_rule() {
        let model =
            HierarchicalModel::new(LinearOperatorSpec::identity(), LinearOperatorSpec::identity(), 1.0, 1.0).unwrap();
        let y = ImageGrid::filled(2, 2, 0.5).unwrap();
        for (iters, burn_in, thin) in [(10, 9, 1), (20, 5, 3), (7, 0, 7), (100, 50, 10)] {
            let cfg = BaselineConfig {
                iters,
                burn_in,
                thin,
                ..Default::default()
            };
            let r = run_full_mcmc(&y, &model, &cfg, 0.1, 0.1).unwrap();
            assert_eq!(r.tau.len(), (iters - burn_in) / thin);
            assert_eq!(r.tau.len(), cfg.kept());
            assert!(r.final_log_joint.is_finite());
        }
    }

    #[test]
    fn invalid_burn_in_rejected() {
        let cfg = BaselineConfig {
            iters: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
