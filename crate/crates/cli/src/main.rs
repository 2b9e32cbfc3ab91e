//! `sep`: phantom generation, reconstruction, diagnostics, clutter
//! experiments and method comparison.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sep_core::config::RunConfig;
use sep_core::SepError;

/// Config sections that may be set with `--section.key value`.
const SECTIONS: &[&str] = &["model", "phantom", "ep", "mc", "admm", "mh", "baseline"];

#[derive(Parser, Debug)]
#[command(
    name = "sep",
    version,
    about = "Splitting expectation propagation for Bayesian image reconstruction"
)]
#[command(
    after_help = "Any config key can also be given as a flag, e.g. --mc.samples 4096 or --admm.rho=0.1.\nSEP_THREADS caps the worker thread count; RUST_LOG=warn shows skipped EP sites."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub(crate) struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write truth, blurred mean and noisy observation images.
    GenPhantom(commands::GenPhantomArgs),
    /// Reconstruct an image with one engine.
    Reconstruct(commands::ReconstructArgs),
    /// Convergence diagnostics for a chains CSV.
    Diagnose(commands::DiagnoseArgs),
    /// Clutter-problem density curves and overlay plot.
    Clutter(commands::ClutterArgs),
    /// Run several engines on one phantom and tabulate the results.
    Compare(commands::CompareArgs),
    /// List the available engines and config keys.
    Engines,
}

/// A problem with the command line rather than the computation.
#[derive(Debug)]
pub(crate) struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Splits `--section.key value` and `--section.key=value` out of `args`.
fn extract_dotted(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|name| name.split_once('.').is_some_and(|(s, _)| SECTIONS.contains(&s)))
            .map(str::to_string);
        match dotted {
            Some(name) => match name.split_once('=') {
                Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
                None => {
                    let v = it.next().unwrap_or_default();
                    pairs.push((name, v));
                }
            },
            None => rest.push(arg),
        }
    }
    (rest, pairs)
}

/// Defaults, then the config file, then `--set` and dotted flags, then
/// `--seed` / `--out-dir`.
pub(crate) fn build_config(common: &Common, dotted: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k, v)?;
    }
    for (k, v) in dotted {
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEP_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Usage(format!("SEP_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Usage("SEP_THREADS must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SepError>() {
            return match e {
                SepError::Numeric(_)
                | SepError::CavityCollapse { .. }
                | SepError::DegenerateWeights
                | SepError::InvalidStart(_) => 3,
                _ => 2,
            };
        }
    }
    3
}

fn run(cli: Cli, dotted: Vec<(String, String)>) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenPhantom(a) => commands::gen_phantom(&a, &dotted),
        Command::Reconstruct(a) => commands::reconstruct(&a, &dotted),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Clutter(a) => commands::clutter(&a, &dotted),
        Command::Compare(a) => commands::compare(&a, &dotted),
        Command::Engines => {
            commands::list_engines();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let (args, dotted) = extract_dotted(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
