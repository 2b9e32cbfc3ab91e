//! The hierarchical image model.
//!
//! `y ~ N(G x, lambda)` per pixel, `(L x) ~ N(0, tau)` per pixel, and
//! exponential hyperpriors with rates `alpha_lambda` and `alpha_tau`. The
//! second Gaussian parameter is always a variance; reports convert to
//! precision and standard deviation through [`VarianceSummary`].

mod grid;
mod operator;

pub use grid::{relative_error, ImageGrid};
pub use operator::{
    apply_operator, diagonal_surrogate, Boundary, Kernel, LinearOperatorSpec, OperatorKind, SparseOperator,
};

use crate::error::{Result, SepError};
use std::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(x | mean, var)`.
#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub forward: LinearOperatorSpec,
    pub regularizer: LinearOperatorSpec,
    pub hyper_rate_tau: f64,
    pub hyper_rate_lambda: f64,
}

impl HierarchicalModel {
    pub fn new(
        forward: LinearOperatorSpec,
        regularizer: LinearOperatorSpec,
        hyper_rate_tau: f64,
        hyper_rate_lambda: f64,
    ) -> Result<Self> {
        forward.validate_forward()?;
        for (name, rate) in [("tau", hyper_rate_tau), ("lambda", hyper_rate_lambda)] {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(SepError::Domain(format!(
                    "hyper rate for {name} must be positive, got {rate}"
                )));
            }
        }
        Ok(Self {
            forward,
            regularizer,
            hyper_rate_tau,
            hyper_rate_lambda,
        })
    }
}

impl Default for HierarchicalModel {
    /// Gaussian blur (sigma = 1) forward map, identity regularizer, hyper rates of 10.
    fn default() -> Self {
        Self {
            forward: LinearOperatorSpec::gaussian_blur(1.0).expect("valid blur width"),
            regularizer: LinearOperatorSpec::identity(),
            hyper_rate_tau: 10.0,
            hyper_rate_lambda: 10.0,
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(SepError::Domain(format!("{name} must be a positive variance, got {v}")));
    }
    Ok(())
}

/// `sum_ij log N(y_ij | (G x)_ij, lambda)`.
pub fn log_likelihood(y: &ImageGrid, x: &ImageGrid, g: &LinearOperatorSpec, lambda: f64) -> Result<f64> {
    require_positive("lambda", lambda)?;
    y.same_shape(x)?;
    let gx = apply_operator(g, x)?;
    Ok(y.values()
        .iter()
        .zip(gx.values())
        .map(|(&yi, &m)| log_normal_pdf(yi, m, lambda))
        .sum())
}

/// `sum_ij log N((L x)_ij | 0, tau)`.
pub fn log_prior_field(x: &ImageGrid, l: &LinearOperatorSpec, tau: f64) -> Result<f64> {
    require_positive("tau", tau)?;
    let lx = apply_operator(l, x)?;
    Ok(lx.values().iter().map(|&v| log_normal_pdf(v, 0.0, tau)).sum())
}

/// Log density of an exponential distribution with the given rate.
pub fn log_exponential(theta: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(SepError::Domain(format!(
            "exponential rate must be positive, got {rate}"
        )));
    }
    if theta < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(rate.ln() - rate * theta)
}

/// Unnormalized log posterior of `(x, lambda, tau)`.
pub fn log_joint(y: &ImageGrid, x: &ImageGrid, lambda: f64, tau: f64, model: &HierarchicalModel) -> Result<f64> {
    if lambda < 0.0 || tau < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood(y, x, &model.forward, lambda)?
        + log_prior_field(x, &model.regularizer, tau)?
        + log_exponential(lambda, model.hyper_rate_lambda)?
        + log_exponential(tau, model.hyper_rate_tau)?)
}

/// A variance reported alongside its precision and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSummary {
    pub variance: f64,
    pub precision: f64,
    pub sd: f64,
}

impl VarianceSummary {
    pub fn from_variance(variance: f64) -> Self {
        Self {
            variance,
            precision: 1.0 / variance,
            sd: variance.sqrt(),
        }
    }
}
