use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use sep_core::clutter::{
    default_grid, exact_posterior, generate_clutter_data, quadrature_posterior, ClutterModel, ENUMERATION_CAP,
};
use sep_core::config::{RunConfig, KEYS};
use sep_core::diagnostics::{autocorrelation, credible_interval, psrf, ChainSet, Psrf};
use sep_core::engine::{ClutterRegistry, EngineRegistry, Reconstruction};
use sep_core::io::{read_chains, read_image, write_chains, write_curve, write_image, Report};
use sep_core::model::{apply_operator, relative_error, ImageGrid, VarianceSummary};
use sep_core::phantom::{make_phantom, scale_to_prior_precision, simulate_observation, PhantomKind, PhantomSpec};

use crate::svg::{line_plot, Series};
use crate::{build_config, Common, Usage};

#[derive(Args, Debug)]
pub struct GenPhantomArgs {
    #[arg(long)]
    kind: PhantomKind,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    intensity: Option<f64>,
    /// Prior precision to rescale to; `none` keeps the raw intensity.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long = "noise-sd")]
    noise_sd: Option<f64>,
    /// Also write PGM previews.
    #[arg(long)]
    pgm: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Observed image (CSV or PGM).
    #[arg(long)]
    input: PathBuf,
    /// Ground truth for the relative-error fields.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Chains CSV (`chain,iter,value`).
    #[arg(long)]
    chains: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long = "max-lag", default_value_t = 10)]
    max_lag: usize,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClutterArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    w: f64,
    /// True location of the signal component.
    #[arg(long, default_value_t = 2.0)]
    theta: f64,
    #[arg(long, default_value = "ep,ep-mc,ep-admm,exact", value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1001)]
    points: usize,
    /// Use grid quadrature instead of enumeration for the reference posterior.
    #[arg(long = "approx-oracle")]
    approx_oracle: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    kind: Option<PhantomKind>,
    #[arg(long, default_value = "ep-mc,ep-admm,ep-mcmc,mcmc", value_delimiter = ',')]
    methods: Vec<String>,
    #[command(flatten)]
    common: Common,
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn trace_csv(name: &str, values: &[f64]) -> String {
    let mut out = format!("iter,{name}\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{v}", i + 1);
    }
    out
}

fn phantom_truth(cfg: &RunConfig) -> Result<ImageGrid> {
    let p = &cfg.phantom;
    let x = make_phantom(&PhantomSpec::with_kind(p.kind, p.rows, p.cols, p.intensity))?;
    Ok(match p.precision {
        Some(prec) => scale_to_prior_precision(&x, &cfg.model.build()?.regularizer, prec)?,
        None => x,
    })
}

pub fn gen_phantom(a: &GenPhantomArgs, dotted: &[(String, String)]) -> Result<()> {
    let mut cfg = build_config(&a.common, dotted)?;
    cfg.phantom.kind = a.kind;
    cfg.phantom.rows = a.rows.unwrap_or(cfg.phantom.rows);
    cfg.phantom.cols = a.cols.unwrap_or(cfg.phantom.cols);
    cfg.phantom.intensity = a.intensity.unwrap_or(cfg.phantom.intensity);
    cfg.phantom.noise_sd = a.noise_sd.unwrap_or(cfg.phantom.noise_sd);
    if let Some(p) = &a.precision {
        cfg.set("phantom.precision", p)?;
    }
    let model = cfg.model.build()?;
    let truth = phantom_truth(&cfg)?;
    let mean = apply_operator(&model.forward, &truth)?;
    let noisy = simulate_observation(&truth, &model, cfg.phantom.noise_sd, cfg.seed)?;
    for (name, grid) in [("truth", &truth), ("mean", &mean), ("noisy", &noisy)] {
        write_image(&out_path(&cfg, &format!("{name}.csv")), grid)?;
        if a.pgm {
            write_image(&out_path(&cfg, &format!("{name}.pgm")), grid)?;
        }
    }
    println!("wrote truth.csv, mean.csv, noisy.csv to {}", cfg.out_dir.display());
    Ok(())
}

fn push_summary(report: &mut Report, prefix: &str, s: VarianceSummary) {
    report
        .push(format!("{prefix}_variance"), s.variance)
        .push(format!("{prefix}_precision"), s.precision)
        .push(format!("{prefix}_sd"), s.sd);
}

fn write_outputs(
    cfg: &RunConfig,
    method: &str,
    y: &ImageGrid,
    truth: Option<&ImageGrid>,
    r: &Reconstruction,
    seconds: f64,
) -> Result<Report> {
    let model = cfg.model.build()?;
    let residual = y.zip_with(&apply_operator(&model.forward, &r.mean)?, |a, b| a - b)?;
    write_image(&out_path(cfg, "reconstruction.csv"), &r.mean)?;
    write_image(&out_path(cfg, "reconstruction.pgm"), &r.mean)?;
    write_image(&out_path(cfg, "residual.csv"), &residual)?;
    if let Some(v) = &r.variance {
        write_image(&out_path(cfg, "variance.csv"), v)?;
    }
    write_file(&out_path(cfg, "tau_trace.csv"), &trace_csv("tau", &r.tau_trace))?;
    write_file(
        &out_path(cfg, "lambda_trace.csv"),
        &trace_csv("lambda", &r.lambda_trace),
    )?;
    if let Some((tau, lambda)) = &r.chains {
        write_chains(&out_path(cfg, "chains_tau.csv"), tau)?;
        write_chains(&out_path(cfg, "chains_lambda.csv"), lambda)?;
    }
    let mut report = Report::new();
    report
        .push("method", method)
        .push("rows", y.rows())
        .push("cols", y.cols());
    push_summary(&mut report, "tau", r.tau_summary());
    push_summary(&mut report, "lambda", r.lambda_summary());
    report.push("rms_residual", (residual.sum_squares() / residual.len() as f64).sqrt());
    if let Some(t) = truth {
        report
            .push("relative_error", relative_error(&r.mean, t)?)
            .push("input_relative_error", relative_error(y, t)?);
    }
    for (k, v) in r.details.entries() {
        report.push(k.clone(), v);
    }
    report.push("wall_seconds", seconds);
    report.write(&out_path(cfg, "report.txt"))?;
    Ok(report)
}

pub fn reconstruct(a: &ReconstructArgs, dotted: &[(String, String)]) -> Result<()> {
    let mut cfg = build_config(&a.common, dotted)?;
    if let Some(m) = &a.method {
        cfg.method = m.clone();
    }
    let registry = EngineRegistry::builtin();
    let engine = registry.get(&cfg.method).map_err(|e| Usage(e.to_string()))?;
    let y = read_image(&a.input)?;
    let truth = a.truth.as_deref().map(read_image).transpose()?;
    let start = Instant::now();
    let r = engine
        .reconstruct(&y, &cfg)
        .with_context(|| format!("{} failed", engine.name()))?;
    let report = write_outputs(
        &cfg,
        engine.name(),
        &y,
        truth.as_ref(),
        &r,
        start.elapsed().as_secs_f64(),
    )?;
    print!("{}", report.render());
    Ok(())
}

fn psrf_fields(report: &mut Report, c: &ChainSet) -> Result<()> {
    let p = psrf(c)?;
    report
        .push("w", p.w)
        .push("b_over_n", p.b_over_n)
        .push("sigma2_plus", p.sigma2_plus)
        .push("v_hat", p.v_hat);
    match p.psrf {
        Psrf::Value { classic, ratio } => report.push("psrf_paper", classic).push("psrf_ratio", ratio),
        Psrf::Divergent => report.push("psrf_paper", "divergent").push("psrf_ratio", "divergent"),
        Psrf::Degenerate => report.push("psrf_paper", "degenerate").push("psrf_ratio", "degenerate"),
    };
    Ok(())
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    let chains = read_chains(&a.chains)?;
    if chains.m() < 2 {
        return Err(Usage(format!("diagnostics need at least two chains, found {}", chains.m())).into());
    }
    let mut report = Report::new();
    report
        .push("m", chains.m())
        .push("n", chains.n())
        .push("mean", chains.mean());
    psrf_fields(&mut report, &chains)?;
    let (lo, hi) = credible_interval(&chains.pooled(), a.level)?;
    report.push("level", a.level).push("ci_lower", lo).push("ci_upper", hi);
    for lag in 1..=a.max_lag.min(chains.n() - 1) {
        let acf: Vec<f64> = chains
            .chains()
            .iter()
            .map(|c| autocorrelation(c, lag))
            .collect::<sep_core::Result<_>>()?;
        report.push(format!("acf_lag_{lag}"), acf.iter().sum::<f64>() / acf.len() as f64);
    }
    let text = report.render();
    if let Some(path) = &a.out {
        write_file(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn clutter(a: &ClutterArgs, dotted: &[(String, String)]) -> Result<()> {
    let cfg = build_config(&a.common, dotted)?;
    if a.n > ENUMERATION_CAP && !a.approx_oracle {
        return Err(Usage(format!(
            "n = {} exceeds the enumeration cap of {ENUMERATION_CAP}; pass --approx-oracle",
            a.n
        ))
        .into());
    }
    let cm = ClutterModel::new(a.w)?;
    let data = generate_clutter_data(a.n, a.theta, &cm, cfg.seed)?;
    let grid = default_grid(&data, &cm, a.points);
    let exact = if a.approx_oracle {
        quadrature_posterior(&data, &cm, &grid)?
    } else {
        exact_posterior(&data, &cm, &grid)?
    };
    let registry = ClutterRegistry::builtin();
    let mut report = Report::new();
    report
        .push("n", a.n)
        .push("w", a.w)
        .push("theta", a.theta)
        .push("exact_mean", exact.mean)
        .push("exact_var", exact.var);
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for m in &a.methods {
        let density = if m == "exact" {
            exact.density.clone()
        } else {
            let method = registry.get(m).map_err(|e| Usage(e.to_string()))?;
            let fit = method.fit(&data, &cm, &cfg).with_context(|| format!("{m} failed"))?;
            report
                .push(format!("{m}_mean"), fit.mean)
                .push(format!("{m}_var"), fit.var)
                .push(format!("{m}_sweeps"), fit.sweeps)
                .push(format!("{m}_converged"), fit.converged)
                .push(format!("{m}_collapsed"), fit.collapsed);
            fit.density(&grid)
        };
        write_curve(&out_path(&cfg, &format!("curve_{m}.csv")), &grid, &density)?;
        curves.push((m.clone(), density));
    }
    let series: Vec<Series> = curves
        .iter()
        .map(|(m, d)| Series {
            label: m,
            x: &grid,
            y: d,
        })
        .collect();
    write_file(
        &out_path(&cfg, "clutter.svg"),
        &line_plot(&format!("clutter problem, n = {}, w = {}", a.n, a.w), &series),
    )?;
    report.write(&out_path(&cfg, "clutter_report.txt"))?;
    print!("{}", report.render());
    Ok(())
}

/// Reference `(precision, sd)` of the prior and noise for a method family.
fn reference_values(method: &str) -> (f64, f64) {
    if method == "mcmc" {
        (85.0, 0.085)
    } else {
        (100.0, 0.1)
    }
}

pub fn compare(a: &CompareArgs, dotted: &[(String, String)]) -> Result<()> {
    let mut cfg = build_config(&a.common, dotted)?;
    if let Some(k) = a.kind {
        cfg.phantom.kind = k;
    }
    let model = cfg.model.build()?;
    let truth = phantom_truth(&cfg)?;
    let y = simulate_observation(&truth, &model, cfg.phantom.noise_sd, cfg.seed)?;
    let registry = EngineRegistry::builtin();
    let engines = a
        .methods
        .iter()
        .map(|m| registry.get(m).map_err(|e| Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = String::from(
        "method,relative_error,input_relative_error,tau,lambda,precision,sd,reference_precision,reference_sd\n",
    );
    let mut timings = Report::new();
    let (mut ep_seconds, mut mcmc_seconds) = (0.0, 0.0);
    let input_err = relative_error(&y, &truth)?;
    for e in engines {
        let start = Instant::now();
        let r = e
            .reconstruct(&y, &cfg)
            .with_context(|| format!("{} failed", e.name()))?;
        let secs = start.elapsed().as_secs_f64();
        if e.name() == "mcmc" {
            mcmc_seconds += secs;
        } else {
            ep_seconds += secs;
        }
        timings.push(format!("seconds_{}", e.name()), secs);
        let (rp, rsd) = reference_values(e.name());
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            e.name(),
            relative_error(&r.mean, &truth)?,
            input_err,
            r.tau,
            r.lambda,
            r.tau_summary().precision,
            r.lambda_summary().sd,
            rp,
            rsd
        );
    }
    timings
        .push("ep_pipeline_seconds", ep_seconds)
        .push("baseline_seconds", mcmc_seconds);
    write_file(&out_path(&cfg, "compare.csv"), &table)?;
    timings.write(&out_path(&cfg, "timings.txt"))?;
    print!("{table}");
    print!("{}", timings.render());
    Ok(())
}

pub fn list_engines() {
    let mut out = String::from("image engines:\n");
    for e in EngineRegistry::builtin().iter() {
        let _ = writeln!(out, "  {:<8} {}", e.name(), e.description());
    }
    let _ = writeln!(
        out,
        "clutter methods: {}",
        ClutterRegistry::builtin().names().join(", ")
    );
    out.push_str("config keys:\n");
    for (k, d) in KEYS {
        let _ = writeln!(out, "  {k:<22} {d}");
    }
    let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), out.as_bytes());
}
