mod common;

use common::{npdf, rng, simpson};
use rand::Rng;
use sep_core::epcore::EpConfig;
use sep_core::epmc::{
    epmc_fit, exponential_draws, grad_log_z_rate, gradient_step, mc_normalizer_lambda, mc_normalizer_tau,
    snis_gradient, update_rate, McConfig, RATE_FLOOR,
};
use sep_core::field::FieldOptions;
use sep_core::model::{HierarchicalModel, ImageGrid, LinearOperatorSpec};

fn mc(samples: usize, seed: u64) -> McConfig {
    McConfig {
        samples,
        seed,
        ..McConfig::default()
    }
}

/// `int f(t) Exp(t | rate) dt` by Simpson in `u = ln t`.
fn exp_mixture_quadrature(f: impl Fn(f64) -> f64, rate: f64) -> f64 {
    simpson(
        |u| {
            let t = u.exp();
            f(t) * rate * (-rate * t).exp() * t
        },
        -40.0,
        4.0,
        200_000,
    )
}

/// Sample mean and standard error of `f` over the normalizer draws.
fn mc_with_se(f: impl Fn(f64) -> f64, rate: f64, cfg: &McConfig) -> (f64, f64) {
    let v: Vec<f64> = exponential_draws(rate, cfg).unwrap().into_iter().map(f).collect();
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

#[test]
fn single_draw_normalizers() {
    let cfg = mc(1, 9);
    let t = exponential_draws(8.0, &cfg).unwrap()[0];
    assert!((mc_normalizer_tau(0.5, 8.0, &cfg).unwrap() - npdf(0.5, 0.0, t)).abs() < 1e-12 * npdf(0.5, 0.0, t));
    assert!(
        (mc_normalizer_lambda(0.2, -0.1, 8.0, &cfg).unwrap() - npdf(0.2, -0.1, t)).abs() < 1e-12 * npdf(0.2, -0.1, t)
    );
}

#[test]
fn tau_normalizer_matches_quadrature() {
    let cfg = mc(1_000_000, 1);
    let est = mc_normalizer_tau(0.5, 8.0, &cfg).unwrap();
    let (_, se) = mc_with_se(|t| npdf(0.5, 0.0, t), 8.0, &cfg);
    let exact = exp_mixture_quadrature(|t| npdf(0.5, 0.0, t), 8.0);
    assert!((est - exact).abs() < 3.0 * se, "est {est} exact {exact} se {se}");
}

#[test]
fn lambda_normalizer_matches_quadrature() {
    let cfg = mc(1_000_000, 2);
    let est = mc_normalizer_lambda(0.3, 0.3, 8.0, &cfg).unwrap();
    let (_, se) = mc_with_se(|t| npdf(0.3, 0.3, t), 8.0, &cfg);
    let exact = exp_mixture_quadrature(|t| npdf(0.0, 0.0, t), 8.0);
    assert!((est - exact).abs() < 3.0 * se, "est {est} exact {exact} se {se}");
}

#[test]
fn different_seeds_agree_within_error() {
    let (a, b) = (mc(1_000_000, 3), mc(1_000_000, 4));
    let (ea, sa) = mc_with_se(|t| npdf(0.5, 0.0, t), 8.0, &a);
    let (eb, sb) = mc_with_se(|t| npdf(0.5, 0.0, t), 8.0, &b);
    assert!((ea - eb).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
    assert_ne!(
        mc_normalizer_tau(0.5, 8.0, &a).unwrap(),
        mc_normalizer_tau(0.5, 8.0, &b).unwrap()
    );
}

#[test]
fn lambda_normalizer_decreases_with_residual() {
    let cfg = mc(10_000, 5);
    let mut last = f64::INFINITY;
    for d in [0.0, 0.1, 0.3, 0.7, 1.5] {
        let z = mc_normalizer_lambda(1.0 + d, 1.0, 8.0, &cfg).unwrap();
        assert!(z < last);
        last = z;
    }
}

#[test]
fn rate_gradient_is_the_sample_mean() {
    assert!((grad_log_z_rate(&[0.1, 0.2, 0.3]).unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(grad_log_z_rate(&[4.5]).unwrap(), 4.5);
    assert!(grad_log_z_rate(&[]).is_err());
    let alpha = 2.5;
    let k = 200_000;
    let draws = exponential_draws(alpha, &mc(k, 6)).unwrap();
    let se = 1.0 / (alpha * (k as f64).sqrt());
    assert!((grad_log_z_rate(&draws).unwrap() - 1.0 / alpha).abs() < 3.0 * se);
}

#[test]
fn rate_update_cases() {
    assert!((update_rate(8.0, 1.0 / 64.0, 0.2) - 8.003125).abs() < 1e-12);
    assert_eq!(update_rate(8.0, 1.0 / 64.0, 0.0), 8.0);
    assert_eq!(update_rate(1.0, 1.0, -5.0), RATE_FLOOR);
}

#[test]
fn snis_cases() {
    let g = [1.0, -2.0, 4.5, 0.25];
    assert!((snis_gradient(&[0.3; 4], &g).unwrap() - 0.9375).abs() < 1e-15);
    assert_eq!(snis_gradient(&[0.0, 0.0, 2.0, 0.0], &g).unwrap(), 4.5);
    assert!(snis_gradient(&[0.0; 4], &g).is_err());
    let mut r = rng(7);
    for _ in 0..50 {
        let n = r.random_range(1..200);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let gs: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let total: f64 = w.iter().sum();
        let want: f64 = w.iter().map(|x| x / total).zip(&gs).map(|(p, x)| p * x).sum();
        assert!((snis_gradient(&w, &gs).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn gradient_steps() {
    assert!((gradient_step(1.0, 0.1, -2.0) - 0.8).abs() < 1e-15);
    for g in [1e10, -1e10, 3.0] {
        assert!((gradient_step(0.7, 1e-30, g) - 0.7).abs() <= 1e-20);
    }
    // ln of a Gaussian convolution integral: concave in omega.
    let objective = |w: f64| simpson(|t| npdf(t, w, 1.0) * npdf(t, 2.0, 1.0), -20.0, 20.0, 4000).ln();
    let mut w = -1.0;
    let mut last = objective(w);
    for _ in 0..20 {
        let h = 1e-5;
        let g = (objective(w + h) - objective(w - h)) / (2.0 * h);
        w = gradient_step(w, 0.2, g);
        let now = objective(w);
        assert!(now > last);
        last = now;
    }
}

fn identity_model() -> HierarchicalModel {
    HierarchicalModel::new(
        LinearOperatorSpec::identity(),
        LinearOperatorSpec::identity(),
        10.0,
        10.0,
    )
    .unwrap()
}

#[test]
fn noise_free_identity_fit_recovers_data() {
    let y = ImageGrid::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4).unwrap();
    let cfg = McConfig {
        samples: 4096,
        learning_rate: 1.0,
        seed: 8,
    };
    let opts = FieldOptions {
        tau0: 1.0,
        lambda0: 1e-6,
        learn_hyper: false,
    };
    let r = epmc_fit(&y, &identity_model(), &cfg, &EpConfig::default(), &opts).unwrap();
    for (m, yv) in r.mean.values().iter().zip(y.values()) {
        assert!((m - yv).abs() < 1e-4, "{m} vs {yv}");
    }
    assert_eq!(r.violations, 0);
}

#[test]
fn fit_is_deterministic() {
    let y = ImageGrid::from_fn(8, 8, |i, j| if (i + 2 * j) % 4 == 0 { 0.5 } else { 0.1 }).unwrap();
    let cfg = McConfig {
        samples: 256,
        seed: 3,
        ..McConfig::default()
    };
    let ep = EpConfig {
        max_sweeps: 20,
        ..EpConfig::default()
    };
    let model = HierarchicalModel::default();
    let a = epmc_fit(&y, &model, &cfg, &ep, &FieldOptions::default()).unwrap();
    let b = epmc_fit(&y, &model, &cfg, &ep, &FieldOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.tau_rate > 0.0 && a.lambda_rate > 0.0 && a.violations == 0);
}
