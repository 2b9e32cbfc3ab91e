#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use sep_core::diagnostics::ChainSet;

pub fn sep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sep"))
        .args(args)
        .output()
        .expect("spawn sep")
}

pub fn sep_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sep"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn sep")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// `key: value` lines into pairs.
pub fn fields(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn field(text: &str, key: &str) -> f64 {
    fields(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no field {key} in\n{text}"))
        .1
        .parse()
        .unwrap()
}

/// `m = 10` chains of `n = 1000` draws with within-chain variance 98.53 and
/// between-chain variance of the means 68.32: a +-1 alternating pattern
/// scaled to the within variance plus alternating chain offsets.
pub fn reference_chains() -> ChainSet {
    let (m, n) = (10usize, 1000usize);
    let s = (98.53 * (n as f64 - 1.0) / n as f64).sqrt();
    let t = (68.32 * (m as f64 - 1.0) / m as f64).sqrt();
    let chains = (0..m)
        .map(|j| {
            let offset = if j % 2 == 0 { t } else { -t };
            (0..n).map(|i| offset + if i % 2 == 0 { s } else { -s }).collect()
        })
        .collect();
    ChainSet::new(chains).unwrap()
}

pub fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}
