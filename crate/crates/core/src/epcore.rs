//! Generic expectation-propagation machinery shared by every engine.
//!
//! Beliefs and sites live in natural parameters (precision, precision x mean)
//! so that cavity formation and site updates are plain subtraction. A site
//! with zero precision is vacuous. Sites may carry negative precision; only
//! cavities and beliefs must stay proper.

use crate::error::{Result, SepError};

/// Moment-form Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn natural(&self) -> NaturalGaussian {
        NaturalGaussian::from_moments(self.mean, self.var)
    }
}

/// Natural-parameter Gaussian factor: `precision` and `shift = precision * mean`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NaturalGaussian {
    pub precision: f64,
    pub shift: f64,
}

impl NaturalGaussian {
    pub const VACUOUS: NaturalGaussian = NaturalGaussian {
        precision: 0.0,
        shift: 0.0,
    };

    /// An infinite variance maps to the vacuous factor.
    pub fn from_moments(mean: f64, var: f64) -> Self {
        if var.is_infinite() {
            return Self::VACUOUS;
        }
        Self {
            precision: 1.0 / var,
            shift: mean / var,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.precision == 0.0 && self.shift == 0.0
    }

    /// Variance; `+inf` for a vacuous factor.
    pub fn variance(&self) -> f64 {
        if self.precision == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.precision
        }
    }

    /// Mean; zero for a vacuous factor.
    pub fn mean(&self) -> f64 {
        if self.precision == 0.0 {
            0.0
        } else {
            self.shift / self.precision
        }
    }

    pub fn moments(&self) -> Gaussian {
        Gaussian::new(self.mean(), self.variance())
    }

    pub fn times(&self, other: &NaturalGaussian) -> NaturalGaussian {
        NaturalGaussian {
            precision: self.precision + other.precision,
            shift: self.shift + other.shift,
        }
    }

    pub fn divide(&self, other: &NaturalGaussian) -> NaturalGaussian {
        NaturalGaussian {
            precision: self.precision - other.precision,
            shift: self.shift - other.shift,
        }
    }

    /// `(1 - delta) * self + delta * other` in natural parameters.
    pub fn blend(&self, other: &NaturalGaussian, delta: f64) -> NaturalGaussian {
        NaturalGaussian {
            precision: (1.0 - delta) * self.precision + delta * other.precision,
            shift: (1.0 - delta) * self.shift + delta * other.shift,
        }
    }

    fn max_abs_diff(&self, other: &NaturalGaussian) -> f64 {
        (self.precision - other.precision)
            .abs()
            .max((self.shift - other.shift).abs())
    }
}

/// Per-pixel `q(X)` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBeliefGrid {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianBeliefGrid {
    pub fn new(rows: usize, cols: usize, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != rows * cols || var.len() != rows * cols {
            return Err(SepError::Shape("belief grid length mismatch".into()));
        }
        if let Some(k) = var.iter().position(|v| !(*v > 0.0)) {
            return Err(SepError::Domain(format!("belief variance at {k} is not positive")));
        }
        Ok(Self { rows, cols, mean, var })
    }

    pub fn get(&self, k: usize) -> Gaussian {
        Gaussian::new(self.mean[k], self.var[k])
    }
}

/// Per-pixel Gaussian sites.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSiteGrid {
    pub rows: usize,
    pub cols: usize,
    pub sites: Vec<NaturalGaussian>,
}

impl GaussianSiteGrid {
    pub fn vacuous(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            sites: vec![NaturalGaussian::VACUOUS; rows * cols],
        }
    }

    pub fn site_mean(&self, k: usize) -> f64 {
        self.sites[k].mean()
    }

    pub fn site_variance(&self, k: usize) -> f64 {
        self.sites[k].variance()
    }
}

/// Exponential belief `q(theta) = rate * exp(-rate * theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialBelief {
    rate: f64,
}

impl ExponentialBelief {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SepError::Domain(format!(
                "exponential rate must be positive, got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn variance(&self) -> f64 {
        1.0 / (self.rate * self.rate)
    }
}

/// Divides `site` out of `belief`.
pub fn gaussian_cavity(belief: Gaussian, site: NaturalGaussian) -> Result<Gaussian> {
    if !(belief.var > 0.0) {
        return Err(SepError::Domain(format!(
            "belief variance must be positive, got {}",
            belief.var
        )));
    }
    if site.is_vacuous() {
        return Ok(belief);
    }
    let cav = belief.natural().divide(&site);
    if !(cav.precision > 0.0) {
        return Err(SepError::CavityCollapse {
            site: None,
            detail: format!("cavity precision {} is not positive", cav.precision),
        });
    }
    Ok(cav.moments())
}

/// `alpha - alpha_site` for exponential beliefs.
pub fn exponential_cavity(rate: f64, site_rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(SepError::Domain(format!("belief rate must be positive, got {rate}")));
    }
    let cav = rate - site_rate;
    if !(cav > 0.0) {
        return Err(SepError::CavityCollapse {
            site: None,
            detail: format!("cavity rate {cav} is not positive"),
        });
    }
    Ok(cav)
}

/// KL(tilted || q) over Gaussians is minimized by matching the first two moments.
pub fn moment_match_gaussian(tilted_mean: f64, tilted_variance: f64) -> Result<Gaussian> {
    if !(tilted_variance > 0.0) || !tilted_variance.is_finite() || !tilted_mean.is_finite() {
        return Err(SepError::Domain(format!(
            "tilted moments must be finite with positive variance, got ({tilted_mean}, {tilted_variance})"
        )));
    }
    Ok(Gaussian::new(tilted_mean, tilted_variance))
}

/// New site = new belief / cavity.
pub fn gaussian_site_update(new_belief: Gaussian, cavity: Gaussian) -> NaturalGaussian {
    new_belief.natural().divide(&cavity.natural())
}

/// Damped site: `(1 - delta) * old + delta * proposed` in natural parameters.
pub fn damp_site(old: NaturalGaussian, proposed: NaturalGaussian, delta: f64) -> NaturalGaussian {
    old.blend(&proposed, delta)
}

/// EP state over a set of scalar Gaussian variables. Each site attaches to
/// one variable; each variable also carries a fixed base factor (its prior).
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    base: Vec<NaturalGaussian>,
    sites: Vec<NaturalGaussian>,
    targets: Vec<usize>,
    beliefs: Vec<NaturalGaussian>,
}

impl EpState {
    /// All sites start vacuous, so beliefs equal the base factors.
    pub fn new(base: Vec<NaturalGaussian>, targets: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = targets.iter().find(|&&t| t >= base.len()) {
            return Err(SepError::Shape(format!("site target {bad} out of range")));
        }
        let sites = vec![NaturalGaussian::VACUOUS; targets.len()];
        let beliefs = base.clone();
        Ok(Self {
            base,
            sites,
            targets,
            beliefs,
        })
    }

    pub fn with_sites(base: Vec<NaturalGaussian>, targets: Vec<usize>, sites: Vec<NaturalGaussian>) -> Result<Self> {
        if sites.len() != targets.len() {
            return Err(SepError::Shape("site and target counts differ".into()));
        }
        let mut s = Self::new(base, targets)?;
        s.sites = sites;
        s.recompute_beliefs();
        Ok(s)
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_variables(&self) -> usize {
        self.base.len()
    }

    pub fn site(&self, s: usize) -> NaturalGaussian {
        self.sites[s]
    }

    pub fn sites(&self) -> &[NaturalGaussian] {
        &self.sites
    }

    pub fn target(&self, s: usize) -> usize {
        self.targets[s]
    }

    pub fn belief(&self, v: usize) -> Gaussian {
        self.beliefs[v].moments()
    }

    pub fn belief_natural(&self, v: usize) -> NaturalGaussian {
        self.beliefs[v]
    }

    pub fn base(&self, v: usize) -> NaturalGaussian {
        self.base[v]
    }

    /// Replaces the base factor of variable `v`, keeping its sites.
    pub fn set_base(&mut self, v: usize, base: NaturalGaussian) {
        let delta = base.divide(&self.base[v]);
        self.base[v] = base;
        self.beliefs[v] = self.beliefs[v].times(&delta);
    }

    pub fn set_site(&mut self, s: usize, site: NaturalGaussian) {
        let v = self.targets[s];
        self.beliefs[v] = self.beliefs[v].divide(&self.sites[s]).times(&site);
        self.sites[s] = site;
    }

    pub fn recompute_beliefs(&mut self) {
        self.beliefs = self.base.clone();
        for (site, &v) in self.sites.iter().zip(&self.targets) {
            self.beliefs[v] = self.beliefs[v].times(site);
        }
    }

    pub fn belief_means(&self) -> Vec<f64> {
        self.beliefs.iter().map(|b| b.mean()).collect()
    }

    pub fn belief_variances(&self) -> Vec<f64> {
        self.beliefs.iter().map(|b| b.variance()).collect()
    }
}

/// Engine-specific part of a site refinement: given the cavity, return the
/// new belief for the site's variable (tilted moments, possibly corrected).
pub trait SiteHook {
    fn refine(&mut self, site: usize, cavity: Gaussian, state: &EpState) -> Result<Gaussian>;
}

impl<F> SiteHook for F
where
    F: FnMut(usize, Gaussian, &EpState) -> Result<Gaussian>,
{
    fn refine(&mut self, site: usize, cavity: Gaussian, state: &EpState) -> Result<Gaussian> {
        self(site, cavity, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpConfig {
    /// Weight on the proposed site; 1.0 is the undamped update.
    pub damping: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            damping: 1.0,
            tol: 1e-6,
            max_sweeps: 200,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SepError::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(SepError::Config(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_sweeps == 0 {
            return Err(SepError::Config("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepStats {
    /// Largest absolute change of any site parameter.
    pub max_change: f64,
    pub collapsed: usize,
    pub failed: usize,
}

/// Row-major schedule `0..n`.
pub fn row_major_schedule(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn check_schedule(schedule: &[usize], n: usize) -> Result<()> {
    if schedule.len() != n {
        return Err(SepError::Config(format!(
            "schedule has {} entries for {n} sites",
            schedule.len()
        )));
    }
    let mut seen = vec![false; n];
    for &s in schedule {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(SepError::Config(format!(
                "schedule must visit each site once; bad entry {s}"
            )));
        }
    }
    Ok(())
}

/// One pass over the sites: cavity, engine refinement, site update by division.
/// Collapsed cavities and failed refinements skip the site and are counted.
pub fn ep_sweep<H: SiteHook + ?Sized>(
    state: &mut EpState,
    schedule: &[usize],
    hook: &mut H,
    damping: f64,
) -> Result<SweepStats> {
    check_schedule(schedule, state.num_sites())?;
    let mut stats = SweepStats::default();
    for &s in schedule {
        let v = state.targets[s];
        let cavity_nat = state.beliefs[v].divide(&state.sites[s]);
        if !(cavity_nat.precision > 0.0) {
            stats.collapsed += 1;
            continue;
        }
        let cavity = cavity_nat.moments();
        let proposed = match hook.refine(s, cavity, state) {
            Ok(b) if b.var > 0.0 && b.var.is_finite() && b.mean.is_finite() => b,
            Ok(b) => {
                log::warn!("site {s}: refinement returned improper belief {b:?}; skipped");
                stats.failed += 1;
                continue;
            }
            Err(e) => {
                log::warn!("site {s}: refinement failed ({e}); skipped");
                stats.failed += 1;
                continue;
            }
        };
        let new_site = damp_site(state.sites[s], proposed.natural().divide(&cavity_nat), damping);
        stats.max_change = stats.max_change.max(new_site.max_abs_diff(&state.sites[s]));
        state.sites[s] = new_site;
        state.beliefs[v] = cavity_nat.times(&new_site);
    }
    Ok(stats)
}

/// True iff every site parameter moved by strictly less than `tol`.
pub fn converged(prev: &EpState, next: &EpState, tol: f64) -> bool {
    prev.sites.len() == next.sites.len() && prev.sites.iter().zip(&next.sites).all(|(a, b)| a.max_abs_diff(b) < tol)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpRunReport {
    pub sweeps: usize,
    pub converged: bool,
    pub collapsed: usize,
    pub failed: usize,
    pub max_change: Vec<f64>,
}

/// Sweeps until [`converged`] or `cfg.max_sweeps`.
pub fn run_ep<H: SiteHook + ?Sized>(state: &mut EpState, hook: &mut H, cfg: &EpConfig) -> Result<EpRunReport> {
    cfg.validate()?;
    let schedule = row_major_schedule(state.num_sites());
    let mut report = EpRunReport::default();
    for _ in 0..cfg.max_sweeps {
        let prev = state.clone();
        let stats = ep_sweep(state, &schedule, hook, cfg.damping)?;
        report.sweeps += 1;
        report.collapsed += stats.collapsed;
        report.failed += stats.failed;
        report.max_change.push(stats.max_change);
        if stats.collapsed + stats.failed == state.num_sites() && state.num_sites() > 0 {
            return Err(SepError::Numeric("every site was skipped in a sweep".into()));
        }
        if converged(&prev, state, cfg.tol) {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuous_site_cavity_is_belief() {
        let b = Gaussian::new(0.7, 2.5);
        let c = gaussian_cavity(b, NaturalGaussian::VACUOUS).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn cavity_by_division() {
        let c = gaussian_cavity(Gaussian::new(1.0, 0.5), NaturalGaussian::from_moments(2.0, 1.0)).unwrap();
        assert!((c.mean - 0.0).abs() < 1e-12);
        assert!((c.var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn over_confident_site_collapses_cavity() {
        let r = gaussian_cavity(Gaussian::new(0.0, 1.0), NaturalGaussian::from_moments(0.0, 0.5));
        assert!(matches!(r, Err(SepError::CavityCollapse { .. })));
    }

    #[test]
    fn exponential_cavity_cases() {
        assert_eq!(exponential_cavity(10.0, 2.0).unwrap(), 8.0);
        assert_eq!(exponential_cavity(3.5, 0.0).unwrap(), 3.5);
        assert!(matches!(
            exponential_cavity(1.0, 1.0),
            Err(SepError::CavityCollapse { .. })
        ));
    }

    #[test]
    fn moment_match_is_identity_projection() {
        let q = moment_match_gaussian(0.0, 1.0).unwrap();
        assert_eq!(q, Gaussian::new(0.0, 1.0));
        let twice = moment_match_gaussian(q.mean, q.var).unwrap();
        assert_eq!(twice, q);
        assert!(moment_match_gaussian(0.0, 0.0).is_err());
    }

    #[test]
    fn site_update_cases() {
        let cav = Gaussian::new(0.3, 1.7);
        assert!(gaussian_site_update(cav, cav).is_vacuous());
        let s = gaussian_site_update(Gaussian::new(0.5, 0.5), Gaussian::new(0.0, 1.0));
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn site_then_cavity_round_trips() {
        let cav = Gaussian::new(-0.4, 2.0);
        let belief = Gaussian::new(0.9, 0.3);
        let site = gaussian_site_update(belief, cav);
        let back = gaussian_cavity(belief, site).unwrap();
        assert!((back.mean - cav.mean).abs() < 1e-12);
        assert!((back.var - cav.var).abs() < 1e-12);
    }

    #[test]
    fn negative_site_variance_is_representable() {
        // Belief wider than cavity gives a negative-precision site.
        let s = gaussian_site_update(Gaussian::new(0.0, 2.0), Gaussian::new(0.0, 1.0));
        assert!(s.precision < 0.0);
        assert!(s.variance() < 0.0);
    }

    #[test]
    fn identity_hook_is_a_fixed_point() {
        let mut state = EpState::new(vec![NaturalGaussian::from_moments(0.0, 1.0); 3], vec![0, 1, 2, 0]).unwrap();
        let mut hook = |_s: usize, cav: Gaussian, _st: &EpState| Ok(cav);
        let stats = ep_sweep(&mut state, &[0, 1, 2, 3], &mut hook, 1.0).unwrap();
        assert_eq!(stats.max_change, 0.0);
        assert!(state.sites().iter().all(|s| s.is_vacuous()));
    }

    #[test]
    fn conjugate_single_site_reaches_posterior_in_one_sweep() {
        // prior N(0, 4), likelihood N(y = 1.5 | x, 0.5)
        let (y, noise) = (1.5, 0.5);
        let mut state = EpState::new(vec![NaturalGaussian::from_moments(0.0, 4.0)], vec![0]).unwrap();
        let mut hook = |_s: usize, cav: Gaussian, _st: &EpState| {
            let prec = 1.0 / cav.var + 1.0 / noise;
            Ok(Gaussian::new((cav.mean / cav.var + y / noise) / prec, 1.0 / prec))
        };
        ep_sweep(&mut state, &[0], &mut hook, 1.0).unwrap();
        let post_prec = 0.25 + 2.0;
        let b = state.belief(0);
        assert!((b.var - 1.0 / post_prec).abs() < 1e-12);
        assert!((b.mean - 3.0 / post_prec).abs() < 1e-12);
    }

    #[test]
    fn converged_is_strict() {
        let a = EpState::with_sites(
            vec![NaturalGaussian::VACUOUS],
            vec![0],
            vec![NaturalGaussian {
                precision: 1.0,
                shift: 0.0,
            }],
        )
        .unwrap();
        let mut b = a.clone();
        assert!(converged(&a, &b, 1e-6));
        b.set_site(
            0,
            NaturalGaussian {
                precision: 2.0,
                shift: 0.0,
            },
        );
        assert!(!converged(&a, &b, 1e-6));
        let mut c = a.clone();
        c.set_site(
            0,
            NaturalGaussian {
                precision: 1.5,
                shift: 0.0,
            },
        );
        assert!(!converged(&a, &c, 0.5));
    }

    #[test]
    fn collapsed_sites_are_skipped_and_counted() {
        // Belief N(0,1) with an over-confident site (precision 2) -> cavity precision -1.
        let mut state = EpState::with_sites(
            vec![NaturalGaussian::VACUOUS],
            vec![0],
            vec![NaturalGaussian {
                precision: 2.0,
                shift: 0.0,
            }],
        )
        .unwrap();
        state.set_base(
            0,
            NaturalGaussian {
                precision: -1.0,
                shift: 0.0,
            },
        );
        let mut hook = |_s: usize, cav: Gaussian, _st: &EpState| Ok(cav);
        let stats = ep_sweep(&mut state, &[0], &mut hook, 1.0).unwrap();
        assert_eq!(stats.collapsed, 1);
    }

    #[test]
    fn bad_schedule_rejected() {
        let mut state = EpState::new(vec![NaturalGaussian::VACUOUS], vec![0, 0]).unwrap();
        let mut hook = |_s: usize, cav: Gaussian, _st: &EpState| Ok(cav);
        assert!(ep_sweep(&mut state, &[0, 0], &mut hook, 1.0).is_err());
        assert!(ep_sweep(&mut state, &[0], &mut hook, 1.0).is_err());
    }

    #[test]
    fn damping_blends_sites() {
        let mut state = EpState::new(vec![NaturalGaussian::from_moments(0.0, 1.0)], vec![0]).unwrap();
        let mut hook = |_s: usize, _cav: Gaussian, _st: &EpState| Ok(Gaussian::new(1.0, 0.5));
        ep_sweep(&mut state, &[0], &mut hook, 0.5).unwrap();
        // Proposed site: precision 1, shift 2; half of it is applied.
        let s = state.site(0);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.shift - 1.0).abs() < 1e-12);
    }
}
