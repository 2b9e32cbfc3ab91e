//! EP state for the image field shared by the hybrid engines.
//!
//! Every pixel carries two Gaussian sites: a prior site (the exact
//! conditional of the field prior given the neighbours' current means) and a
//! likelihood site for `y_k ~ N(g_k x_k, lambda)` with `g` the per-pixel
//! diagonal surrogate of the forward operator. The hyperparameters carry one
//! exponential block site each on top of their exponential hyperprior.

use crate::epcore::{exponential_cavity, EpState, Gaussian, NaturalGaussian};
use crate::error::{Result, SepError};
use crate::model::{diagonal_surrogate, HierarchicalModel, ImageGrid, OperatorKind, SparseOperator};

/// Exponential belief split into a fixed hyperprior and one block site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBelief {
    pub prior_rate: f64,
    pub site_rate: f64,
}

impl HyperBelief {
    /// Belief with mean `initial`, i.e. rate `1 / initial`.
    pub fn with_mean(prior_rate: f64, initial: f64) -> Result<Self> {
        if !(initial > 0.0) {
            return Err(SepError::Config(format!(
                "initial hyperparameter must be positive, got {initial}"
            )));
        }
        Ok(Self {
            prior_rate,
            site_rate: 1.0 / initial - prior_rate,
        })
    }

    pub fn rate(&self) -> f64 {
        self.prior_rate + self.site_rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate()
    }

    pub fn cavity_rate(&self) -> Result<f64> {
        exponential_cavity(self.rate(), self.site_rate)
    }

    /// Sets the belief rate; the site absorbs the change.
    pub fn set_rate(&mut self, rate: f64) -> Result<()> {
        let cavity = self.cavity_rate()?;
        self.site_rate = rate - cavity;
        Ok(())
    }
}

/// Log of the expected block factor `prod N(. | 0, theta)` over `n` terms
/// whose expected squared values sum to `stat`, up to a constant.
pub fn block_log_factor(theta: f64, n: usize, stat: f64) -> f64 {
    if !(theta > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * n as f64 * theta.ln() - 0.5 * stat / theta
}

/// Log density (unnormalized) of the tilted block distribution
/// `t(theta) Exp(theta | cavity_rate)`.
pub fn block_tilted_log_density(theta: f64, n: usize, stat: f64, cavity_rate: f64) -> f64 {
    if !(theta > 0.0) {
        return f64::NEG_INFINITY;
    }
    block_log_factor(theta, n, stat) + cavity_rate.ln() - cavity_rate * theta
}

/// Mean and variance of the tilted block distribution by quadrature in `ln theta`.
pub fn block_tilted_moments(n: usize, stat: f64, cavity_rate: f64) -> Result<(f64, f64)> {
    if !(stat > 0.0) || !(cavity_rate > 0.0) {
        return Err(SepError::Domain(format!(
            "block moments need stat > 0 and rate > 0, got {stat}, {cavity_rate}"
        )));
    }
    // In u = ln theta the log density is -(n/2 - 1) u - stat/2 e^-u - rate e^u.
    let a = 0.5 * n as f64 - 1.0;
    let h = |u: f64| -a * u - 0.5 * stat * (-u).exp() - cavity_rate * u.exp();
    let d1 = |u: f64| -a + 0.5 * stat * (-u).exp() - cavity_rate * u.exp();
    let d2 = |u: f64| -0.5 * stat * (-u).exp() - cavity_rate * u.exp();
    // d1 is strictly decreasing; bracket and bisect its root.
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d1(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let width = 1.0 / (-d2(mode)).sqrt();
    let half = 14.0 * width;
    let steps = 4000;
    let du = 2.0 * half / steps as f64;
    let peak = h(mode);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=steps {
        let u = mode - half + i as f64 * du;
        let c = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = c * (h(u) - peak).exp();
        let t = u.exp();
        z += p;
        m1 += p * t;
        m2 += p * t * t;
    }
    let mean = m1 / z;
    Ok((mean, (m2 / z - mean * mean).max(0.0)))
}

/// Starting point and hyperparameter handling shared by the field engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOptions {
    pub tau0: f64,
    pub lambda0: f64,
    pub learn_hyper: bool,
}

impl Default for FieldOptions {
    /// `tau = lambda = 0.01`, hyperparameters learned.
    fn default() -> Self {
        Self {
            tau0: 0.01,
            lambda0: 0.01,
            learn_hyper: true,
        }
    }
}

/// Outcome of a field engine run.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub mean: ImageGrid,
    pub variance: ImageGrid,
    pub tau_rate: f64,
    pub lambda_rate: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub collapsed: usize,
    pub failed: usize,
    /// Posterior mean of tau after each sweep.
    pub tau_trace: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    pub max_change: Vec<f64>,
    /// Times a bound had to be enforced (variance floor, rate floor, step guard).
    pub clamps: usize,
    /// Belief variances below the floor or nonpositive rates seen after any sweep.
    pub violations: usize,
}

impl FieldReport {
    pub(crate) fn start(field: &FieldState) -> Result<Self> {
        Ok(Self {
            mean: field.mean_grid()?,
            variance: field.variance_grid()?,
            tau_rate: field.tau.rate(),
            lambda_rate: field.lambda.rate(),
            sweeps: 0,
            converged: false,
            collapsed: 0,
            failed: 0,
            tau_trace: Vec::new(),
            lambda_trace: Vec::new(),
            max_change: Vec::new(),
            clamps: 0,
            violations: 0,
        })
    }

    pub(crate) fn finish(&mut self, field: &FieldState) -> Result<()> {
        self.mean = field.mean_grid()?;
        self.variance = field.variance_grid()?;
        self.tau_rate = field.tau.rate();
        self.lambda_rate = field.lambda.rate();
        Ok(())
    }

    /// Posterior mean of tau under the exponential belief.
    pub fn tau(&self) -> f64 {
        1.0 / self.tau_rate
    }

    pub fn lambda(&self) -> f64 {
        1.0 / self.lambda_rate
    }
}

/// Counts beliefs with variance below `floor` and nonpositive hyper rates.
pub(crate) fn count_violations(field: &FieldState, floor: f64) -> usize {
    let bad_var = field.variances().iter().filter(|v| !(**v >= floor)).count();
    let bad_rate = [field.tau.rate(), field.lambda.rate()]
        .iter()
        .filter(|r| !(**r > 0.0))
        .count();
    bad_var + bad_rate
}

/// Fixed data and operators of the image field.
#[derive(Debug, Clone)]
pub struct FieldGeometry {
    rows: usize,
    cols: usize,
    y: Vec<f64>,
    g: Vec<f64>,
    l: SparseOperator,
    l_identity: bool,
}

impl FieldGeometry {
    pub fn new(y: &ImageGrid, model: &HierarchicalModel) -> Result<Self> {
        let (rows, cols) = y.shape();
        let g = diagonal_surrogate(&model.forward, rows, cols)?.into_values();
        if let Some(k) = g.iter().position(|v| *v == 0.0) {
            return Err(SepError::Domain(format!(
                "diagonal surrogate of G vanishes at pixel {k}"
            )));
        }
        let l = SparseOperator::assemble(&model.regularizer, rows, cols)?;
        let l_identity = matches!(model.regularizer.kind, OperatorKind::Identity);
        Ok(Self {
            rows,
            cols,
            y: y.values().to_vec(),
            g,
            l,
            l_identity,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self, k: usize) -> f64 {
        self.y[k]
    }

    pub fn gain(&self, k: usize) -> f64 {
        self.g[k]
    }

    /// Exact prior factor for pixel `k` given the current means of the others.
    pub fn prior_factor(&self, state: &EpState, k: usize, tau: f64) -> NaturalGaussian {
        if self.l_identity {
            return NaturalGaussian::from_moments(0.0, tau);
        }
        prior_factor(&self.l, k, tau, |j| state.belief_natural(j).mean())
    }

    /// Likelihood factor `N(y_k | g_k x, lambda)` as a function of `x`.
    pub fn likelihood_factor(&self, k: usize, lambda: f64) -> NaturalGaussian {
        likelihood_factor(self.y[k], self.g[k], lambda)
    }

    /// Tilted distribution of the prior site, which is Gaussian.
    pub fn prior_tilted(&self, state: &EpState, k: usize, cavity: Gaussian, tau: f64) -> Gaussian {
        cavity.natural().times(&self.prior_factor(state, k, tau)).moments()
    }

    /// Tilted distribution of the likelihood site, which is Gaussian.
    pub fn likelihood_tilted(&self, k: usize, cavity: Gaussian, lambda: f64) -> Gaussian {
        cavity.natural().times(&self.likelihood_factor(k, lambda)).moments()
    }
}

/// Image-field EP state: sites `2k` (prior) and `2k + 1` (likelihood) for pixel `k`.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub geom: FieldGeometry,
    pub ep: EpState,
    pub tau: HyperBelief,
    pub lambda: HyperBelief,
}

impl FieldState {
    /// Sites start at their exact Gaussian forms under `(tau0, lambda0)` with
    /// zero neighbour means.
    pub fn new(y: &ImageGrid, model: &HierarchicalModel, tau0: f64, lambda0: f64) -> Result<Self> {
        let geom = FieldGeometry::new(y, model)?;
        let n = geom.len();
        let tau = HyperBelief::with_mean(model.hyper_rate_tau, tau0)?;
        let lambda = HyperBelief::with_mean(model.hyper_rate_lambda, lambda0)?;
        let targets: Vec<usize> = (0..2 * n).map(|s| s / 2).collect();
        let mut sites = Vec::with_capacity(2 * n);
        for k in 0..n {
            sites.push(prior_factor(&geom.l, k, tau0, |_| 0.0));
            sites.push(geom.likelihood_factor(k, lambda0));
        }
        let ep = EpState::with_sites(vec![NaturalGaussian::VACUOUS; n], targets, sites)?;
        Ok(Self { geom, ep, tau, lambda })
    }

    pub fn len(&self) -> usize {
        self.geom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geom.is_empty()
    }

    pub fn is_prior_site(site: usize) -> bool {
        site.is_multiple_of(2)
    }

    pub fn means(&self) -> Vec<f64> {
        self.ep.belief_means()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.ep.belief_variances()
    }

    pub fn mean_grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.geom.rows, self.geom.cols, self.means())
    }

    pub fn variance_grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.geom.rows, self.geom.cols, self.variances())
    }

    /// `sum_r E_q[(L x)_r^2]`.
    pub fn prior_statistic(&self) -> f64 {
        let m = self.means();
        let v = self.variances();
        let lm = self.geom.l.apply(&m);
        let lv = self.geom.l.apply_squared(&v);
        lm.iter().zip(&lv).map(|(a, b)| a * a + b).sum()
    }

    /// `sum_k E_q[(y_k - g_k x_k)^2]`.
    pub fn noise_statistic(&self) -> f64 {
        (0..self.len())
            .map(|k| {
                let b = self.ep.belief(k);
                let (y, g) = (self.geom.y[k], self.geom.g[k]);
                let r = y - g * b.mean;
                r * r + g * g * b.var
            })
            .sum()
    }
}

fn prior_factor(l: &SparseOperator, k: usize, tau: f64, mean_of: impl Fn(usize) -> f64) -> NaturalGaussian {
    let mut precision = 0.0;
    let mut shift = 0.0;
    for &(r, w) in l.column(k) {
        let rest: f64 = l
            .row(r)
            .iter()
            .filter(|(j, _)| *j != k)
            .map(|&(j, c)| c * mean_of(j))
            .sum();
        precision += w * w / tau;
        shift -= w * rest / tau;
    }
    NaturalGaussian { precision, shift }
}

fn likelihood_factor(y: f64, g: f64, lambda: f64) -> NaturalGaussian {
    NaturalGaussian {
        precision: g * g / lambda,
        shift: g * y / lambda,
    }
}
