//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{csv_files, ok, reference_chains, sep_env};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sep_core::clutter::{
    clutter_tilted_moments, default_grid, ep_clutter, epadmm_clutter, epmc_clutter, exact_posterior,
    generate_clutter_data, ClutterModel,
};
use sep_core::config::RunConfig;
use sep_core::diagnostics::{between_chain_var, pooled_estimates, psrf, within_chain_var, ChainSet, Psrf};
use sep_core::engine::{Engine, EpAdmm, EpMc, EpMcmc, FullMcmc};
use sep_core::epadmm::{admm_update_site, closed_form_zx, epadmm_reconstruct, AdmmConfig, AdmmState};
use sep_core::epcore::{EpConfig, Gaussian};
use sep_core::epmc::{epmc_fit, exponential_draws, grad_log_z_rate, mc_normalizer_tau, McConfig};
use sep_core::epmcmc::TunedWalk;
use sep_core::model::{normal_pdf, relative_error, ImageGrid};
use sep_core::phantom::{make_phantom, scale_to_prior_precision, simulate_observation, PhantomKind, PhantomSpec};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h))
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn npdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn c1_psrf_fixture() -> Outcome {
    let start = Instant::now();
    let c = reference_chains();
    let (w, b) = (within_chain_var(&c).unwrap(), between_chain_var(&c).unwrap());
    let (s2, v) = pooled_estimates(b, w, c.m(), c.n());
    let r = psrf(&c).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (s2 - 166.75).abs() <= 0.01
        && (v - 173.58).abs() <= 0.01
        && (r.sigma2_plus - s2).abs() < 1e-12
        && (w - 98.53).abs() < 1e-9
        && (b - 68.32).abs() < 1e-9
        && secs < 1.0;
    check(
        pass,
        format!("W {w:.4} B/n {b:.4} sigma2_plus {s2:.4} V_hat {v:.4} ({secs:.3} s)"),
    )
}

fn c2_psrf_identity() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m, n) = (r.random_range(2..16usize), r.random_range(2..2000usize));
        let chain: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let c = ChainSet::new(vec![chain; m]).unwrap();
        let Psrf::Value { classic, .. } = psrf(&c).unwrap().psrf else {
            return Err(format!("undefined psrf at m={m} n={n}"));
        };
        worst = worst.max((classic - (n as f64 - 1.0) / n as f64).abs());
    }
    check(
        worst <= 1e-12,
        format!("max |psrf - (n-1)/n| = {worst:.2e} over 200 random (m, n)"),
    )
}

fn c3_clutter_oracle() -> Outcome {
    let start = Instant::now();
    let cm = ClutterModel::new(0.5).unwrap();
    let data = generate_clutter_data(10, 2.0, &cm, 0).unwrap();
    let exact = exact_posterior(&data, &cm, &default_grid(&data, &cm, 101)).unwrap();
    let ep_cfg = EpConfig::default();
    let ep = ep_clutter(&data, &cm, &ep_cfg).unwrap();
    let mc = epmc_clutter(
        &data,
        &cm,
        &McConfig {
            samples: 10_000,
            ..McConfig::default()
        },
        &ep_cfg,
    )
    .unwrap();
    let admm = epadmm_clutter(
        &data,
        &cm,
        &AdmmConfig {
            rho: 0.0,
            ..AdmmConfig::default()
        },
        &ep_cfg,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (d_ep, d_mc, d_admm) = (
        (ep.mean - exact.mean).abs(),
        (mc.mean - exact.mean).abs(),
        (admm.mean - ep.mean).abs().max((admm.var - ep.var).abs()),
    );
    check(
        d_ep <= 0.15 && d_mc <= 0.20 && d_admm <= 1e-10 && secs < 10.0,
        format!(
            "exact {:.4}, |EP - exact| {d_ep:.4}, |EP-MC - exact| {d_mc:.4}, |ADMM - EP| {d_admm:.1e} ({secs:.2} s)",
            exact.mean
        ),
    )
}

fn c4_gaussian_reduction() -> Outcome {
    let cm = ClutterModel::new(0.0).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let data = generate_clutter_data(10, 1.5, &cm, seed).unwrap();
        let prec = 1.0 / cm.prior_var + data.len() as f64;
        let (m, v) = (data.iter().sum::<f64>() / prec, 1.0 / prec);
        let ep = EpConfig::default();
        let fits = [
            ep_clutter(&data, &cm, &ep).unwrap(),
            epmc_clutter(
                &data,
                &cm,
                &McConfig {
                    samples: 1000,
                    seed,
                    ..McConfig::default()
                },
                &ep,
            )
            .unwrap(),
            epadmm_clutter(&data, &cm, &AdmmConfig::default(), &ep).unwrap(),
        ];
        for f in fits {
            worst = worst.max((f.mean - m).abs()).max((f.var - v).abs());
        }
    }
    check(
        worst <= 1e-8,
        format!("max deviation from conjugate posterior {worst:.2e} (EP, EP-MC, EP-ADMM; 5 data sets)"),
    )
}

fn c5_closed_form_zx() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let plain = AdmmState::new(
        1,
        &AdmmConfig {
            rho: 0.0,
            a: 0.0,
            b: 1e-12,
        },
    )
    .unwrap();
    let (mut worst_z, mut worst_d): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (y, g, m) = (
            r.random_range(-2.0..2.0),
            r.random_range(-1.5..1.5),
            r.random_range(-2.0..2.0),
        );
        let (v, lambda) = (r.random_range(0.05..3.0), r.random_range(0.05..3.0));
        let (z, _, _) = closed_form_zx(y, g, m, v, lambda).unwrap();
        let sd = v.sqrt();
        let zq = simpson(
            |x| npdf(y, g * x, lambda) * npdf(x, m, v),
            m - 14.0 * sd,
            m + 14.0 * sd,
            40_000,
        );
        worst_z = worst_z.max((z - zq).abs() / zq);
        let analytic = (admm_update_site(y, g, m, v, lambda, &plain, 0).unwrap().mean - m) / v;
        let h = 1e-5;
        let lz = |mm: f64| closed_form_zx(y, g, mm, v, lambda).unwrap().0.ln();
        let fd = (lz(m + h) - lz(m - h)) / (2.0 * h);
        worst_d = worst_d.max((analytic - fd).abs());
    }
    check(
        worst_z < 1e-6 && worst_d <= 1e-6,
        format!("max rel error of Z_x {worst_z:.2e}; max |mean shift - FD| {worst_d:.2e}"),
    )
}

fn c6_tilted_moments() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = r.random_range(0.0..1.0);
        let cm = ClutterModel::new(w).unwrap();
        let y = r.random_range(-6.0..6.0);
        let cav = Gaussian::new(r.random_range(-4.0..4.0), r.random_range(0.05..20.0));
        let (_, m, v) = clutter_tilted_moments(y, cav, &cm).unwrap();
        let f = |t: f64| npdf(t, cav.mean, cav.var) * ((1.0 - w) * npdf(y, t, 1.0) + w * npdf(y, 0.0, 10.0));
        let (a, b) = (cav.mean - 14.0 * cav.var.sqrt(), cav.mean + 14.0 * cav.var.sqrt());
        let z = simpson(f, a, b, 100_000);
        let mq = simpson(|t| t * f(t), a, b, 100_000) / z;
        let vq = simpson(|t| (t - mq) * (t - mq) * f(t), a, b, 100_000) / z;
        worst = worst.max((m - mq).abs()).max((v - vq).abs());
    }
    check(
        worst <= 1e-8,
        format!("max |closed form - quadrature| {worst:.2e} over 50 sites"),
    )
}

fn c7_snis_gradient() -> Outcome {
    let (lx, alpha) = (0.5, 8.0);
    let cfg = McConfig {
        samples: 100_000,
        seed: 7,
        ..McConfig::default()
    };
    let z = mc_normalizer_tau(lx, alpha, &cfg).unwrap();
    // Pathwise terms d/d alpha of N(lx | 0, E / alpha) / Z for the same unit draws E.
    let terms: Vec<f64> = exponential_draws(alpha, &cfg)
        .unwrap()
        .iter()
        .map(|&t| normal_pdf(lx, 0.0, t) / z * (1.0 / (2.0 * alpha) - lx * lx / (2.0 * alpha * t)))
        .collect();
    let g = grad_log_z_rate(&terms).unwrap();
    let h = 1e-4;
    let fd = (mc_normalizer_tau(lx, alpha + h, &cfg).unwrap().ln()
        - mc_normalizer_tau(lx, alpha - h, &cfg).unwrap().ln())
        / (2.0 * h);
    let rel = (g - fd).abs() / fd.abs();
    check(
        rel < 1e-3,
        format!("gradient {g:.6e} vs CRN finite difference {fd:.6e}, rel error {rel:.2e} at K = 1e5"),
    )
}

fn recovery_problem(kind: PhantomKind) -> (RunConfig, ImageGrid, ImageGrid) {
    let mut cfg = RunConfig {
        seed: 7,
        ..RunConfig::default()
    };
    cfg.phantom.kind = kind;
    let model = cfg.model.build().unwrap();
    let p = &cfg.phantom;
    let x = make_phantom(&PhantomSpec::with_kind(p.kind, p.rows, p.cols, p.intensity)).unwrap();
    let x = scale_to_prior_precision(&x, &model.regularizer, 100.0).unwrap();
    let y = simulate_observation(&x, &model, 0.1, cfg.seed).unwrap();
    (cfg, x, y)
}

fn c8_synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let (cfg, _, y) = recovery_problem(PhantomKind::Cylinder);
    let within = |v: f64, target: f64| (v - target).abs() <= 0.2 * target;
    let mut pass = true;
    let mut detail = Vec::new();
    for e in [&EpMc as &dyn Engine, &EpMcmc] {
        let r = e.reconstruct(&y, &cfg).unwrap();
        let (p, sd) = (r.tau_summary().precision, r.lambda_summary().sd);
        pass &= within(p, 100.0) && within(sd, 0.1);
        detail.push(format!("{} precision {p:.2} sd {sd:.4}", e.name()));
    }
    let b = cfg.baseline();
    let r = FullMcmc.reconstruct(&y, &cfg).unwrap();
    let kept = r.tau_trace.len();
    pass &= (b.iters, b.burn_in, b.thin) == (1000, 500, 10) && kept == 50;
    detail.push(format!(
        "mcmc {} kept, precision {:.2} sd {:.4}",
        kept,
        r.tau_summary().precision,
        r.lambda_summary().sd
    ));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    check(pass, format!("{} ({secs:.1} s)", detail.join("; ")))
}

fn c9_positivity() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for kind in [PhantomKind::Cylinder, PhantomKind::FourCircles] {
        let (cfg, _, y) = recovery_problem(kind);
        let model = cfg.model.build().unwrap();
        let a = epadmm_reconstruct(&y, &model, &cfg.admm, &cfg.ep, &cfg.model.field_options()).unwrap();
        let below = a.field.variance.values().iter().filter(|v| **v < cfg.admm.b).count();
        let m = epmc_fit(&y, &model, &cfg.mc(), &cfg.ep, &cfg.model.field_options()).unwrap();
        let nonpos = m.variance.values().iter().filter(|v| v.is_nan() || **v <= 0.0).count();
        pass &= a.field.violations == 0 && below == 0 && a.field.tau_rate > 0.0 && a.field.lambda_rate > 0.0;
        pass &= m.violations == 0 && nonpos == 0 && m.tau_rate > 0.0 && m.lambda_rate > 0.0;
        detail.push(format!(
            "{kind:?}: ep-admm violations {} (clamps {}), ep-mc violations {} (clamps {})",
            a.field.violations, a.field.clamps, m.violations, m.clamps
        ));
    }
    check(pass, detail.join("; "))
}

fn c10_improvement() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for kind in [PhantomKind::Cylinder, PhantomKind::FourCircles] {
        let (cfg, x, y) = recovery_problem(kind);
        let r = EpAdmm.reconstruct(&y, &cfg).unwrap();
        let (est, obs) = (relative_error(&r.mean, &x).unwrap(), relative_error(&y, &x).unwrap());
        pass &= est < obs;
        detail.push(format!("{kind:?} {est:.4} < {obs:.4}"));
    }
    check(
        pass,
        format!("EP-ADMM vs observation relative error: {}", detail.join(", ")),
    )
}

fn c11_mh_calibration() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut walk = TunedWalk::new(0.0, 0.05);
    let log_target = |x: f64| -0.5 * x * x;
    let mut accepted_late = 0usize;
    for i in 0..5_000 {
        let before = walk.accepted;
        walk.step(log_target, 0.234, 25, &mut r).unwrap();
        if i >= 2_500 {
            accepted_late += walk.accepted - before;
        }
    }
    let acc = accepted_late as f64 / 2_500.0;
    let draws: Vec<f64> = (0..200_000)
        .map(|_| walk.step(log_target, 0.234, 25, &mut r).unwrap())
        .collect();
    let batch_se = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let means: Vec<f64> = x
            .chunks(x.len() / 50)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let var = means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (mean, (var / means.len() as f64).sqrt())
    };
    let (m, se_m) = batch_se(&draws);
    let sq: Vec<f64> = draws.iter().map(|x| x * x).collect();
    let (v, se_v) = batch_se(&sq);
    check(
        (0.184..=0.284).contains(&acc) && m.abs() <= 3.0 * se_m && (v - 1.0).abs() <= 3.0 * se_v,
        format!(
            "acceptance {acc:.3} over iterations 2501-5000; mean {m:.4} (3 SE {:.4}); variance {v:.4} (3 SE {:.4})",
            3.0 * se_m,
            3.0 * se_v
        ),
    )
}

/// Runs `args` into `out` and returns stdout.
fn run_in(args: &[&str], out: &Path, threads: &str) -> String {
    let mut full: Vec<&str> = args.to_vec();
    let out = out.to_str().unwrap();
    if args[0] != "diagnose" && args[0] != "engines" {
        full.extend(["--out-dir", out]);
    }
    ok(&sep_env(&full, &[("SEP_THREADS", threads)]))
}

fn c12_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let shared = root.path().join("shared");
    fs::create_dir_all(&shared).unwrap();
    run_in(
        &[
            "gen-phantom",
            "--kind",
            "cylinder",
            "--rows",
            "32",
            "--cols",
            "32",
            "--seed",
            "7",
        ],
        &shared,
        "2",
    );
    let noisy = shared.join("noisy.csv");
    let noisy = noisy.to_str().unwrap();
    let chains = shared.join("chains.csv");
    sep_core::io::write_chains(&chains, &reference_chains()).unwrap();
    let chains = chains.to_str().unwrap();
    let small = [
        "--mc.samples",
        "256",
        "--ep.max_sweeps",
        "20",
        "--mh.iters",
        "200",
        "--mh.replications",
        "4",
    ];
    let baseline = [
        "--baseline.iters",
        "200",
        "--baseline.burn_in",
        "100",
        "--baseline.thin",
        "5",
    ];
    let mut commands: Vec<(String, Vec<&str>)> = vec![
        (
            "gen-phantom".into(),
            vec![
                "gen-phantom",
                "--kind",
                "four_circles",
                "--rows",
                "32",
                "--cols",
                "32",
                "--seed",
                "3",
            ],
        ),
        (
            "clutter".into(),
            vec!["clutter", "--n", "10", "--w", "0.5", "--seed", "1"],
        ),
        (
            "compare".into(),
            [
                &[
                    "compare",
                    "--kind",
                    "cylinder",
                    "--phantom.rows",
                    "32",
                    "--phantom.cols",
                    "32",
                    "--seed",
                    "5",
                ][..],
                &small,
                &baseline,
            ]
            .concat(),
        ),
        ("diagnose".into(), vec!["diagnose", "--chains", chains]),
        ("engines".into(), vec!["engines"]),
    ];
    for method in ["ep-mc", "ep-admm", "ep-mcmc", "mcmc"] {
        commands.push((
            format!("reconstruct {method}"),
            [
                &["reconstruct", "--method", method, "--input", noisy, "--seed", "3"][..],
                &small,
                &baseline,
            ]
            .concat(),
        ));
    }
    let mut detail = Vec::new();
    let mut pass = true;
    for (i, (name, args)) in commands.iter().enumerate() {
        let (da, db) = (a.join(i.to_string()), b.join(i.to_string()));
        fs::create_dir_all(&da).unwrap();
        fs::create_dir_all(&db).unwrap();
        let mut args_a = args.clone();
        let mut args_b = args.clone();
        let (fa, fb) = (da.join("diag.txt"), db.join("diag.txt"));
        if name == "diagnose" {
            args_a.extend(["--out", fa.to_str().unwrap()]);
            args_b.extend(["--out", fb.to_str().unwrap()]);
        }
        let sa = run_in(&args_a, &da, "4");
        let sb = run_in(&args_b, &db, "1");
        let files = csv_files(&da);
        let same_files = files == csv_files(&db)
            && files
                .iter()
                .all(|f| fs::read(da.join(f)).unwrap() == fs::read(db.join(f)).unwrap());
        let same_stdout = name != "diagnose" && name != "engines" || sa == sb;
        let ok = same_files && same_stdout && (name == "diagnose" || name == "engines" || !files.is_empty());
        pass &= ok;
        detail.push(format!("{name} {} csv{}", files.len(), if ok { "" } else { " DIFFER" }));
    }
    check(
        pass,
        format!("two runs (4 vs 1 threads) bitwise identical: {}", detail.join(", ")),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "PSRF formula fixture", c1_psrf_fixture),
        (2, "PSRF identity for identical chains", c2_psrf_identity),
        (3, "clutter oracle", c3_clutter_oracle),
        (4, "fully Gaussian reduction", c4_gaussian_reduction),
        (5, "closed-form Z_x vs quadrature", c5_closed_form_zx),
        (6, "tilted moment matching", c6_tilted_moments),
        (7, "SNIS gradient vs CRN finite difference", c7_snis_gradient),
        (8, "synthetic recovery", c8_synthetic_recovery),
        (9, "positivity invariants", c9_positivity),
        (10, "reconstruction improvement", c10_improvement),
        (11, "MH calibration", c11_mh_calibration),
        (12, "CLI determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (n, title, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(d) => println!("PASS criterion {n} ({title}): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} ({title}): {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
