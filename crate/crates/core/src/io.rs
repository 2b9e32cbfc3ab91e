//! File formats: image CSV and PGM, chains CSV, density curves and
//! `key: value` reports.
//!
//! Numbers are written with Rust's shortest round-trip rendering, so every
//! CSV value reads back bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diagnostics::ChainSet;
use crate::error::{Result, SepError};
use crate::model::ImageGrid;

/// Largest PGM sample value.
pub const PGM_MAXVAL: u32 = 65535;

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| SepError::Parse {
        line,
        msg: format!("not a number: {:?}", tok.trim()),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SepError::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SepError::Io(format!("{}: {e}", path.display())))
}

pub fn image_to_csv(grid: &ImageGrid) -> String {
    let mut out = String::new();
    for row in grid.values().chunks(grid.cols()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// One grid row per line, comma separated, no header. Blank lines are skipped.
pub fn image_from_csv(text: &str) -> Result<ImageGrid> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = raw.split(',').map(|t| parse_f64(t, line)).collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(SepError::Parse {
                    line,
                    msg: format!("expected {c} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(SepError::Parse {
            line: 1,
            msg: "no image rows".into(),
        });
    };
    ImageGrid::new(rows, cols, values)
}

/// ASCII PGM (`P2`). Pixels map affinely from `[min, max]` onto `0..=65535`;
/// `min` and `max` go in `#` comments so the reader can undo the map. A
/// constant image writes all zeros.
pub fn image_to_pgm(grid: &ImageGrid) -> String {
    let (lo, hi) = (grid.min(), grid.max());
    let span = hi - lo;
    let mut out = format!(
        "P2\n# min {lo}\n# max {hi}\n{} {}\n{PGM_MAXVAL}\n",
        grid.cols(),
        grid.rows()
    );
    for row in grid.values().chunks(grid.cols()) {
        let line: Vec<String> = row
            .iter()
            .map(|v| {
                let q = if span > 0.0 {
                    ((v - lo) / span * PGM_MAXVAL as f64).round()
                } else {
                    0.0
                };
                (q as u32).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a `P2` file. Without `# min` / `# max` comments samples map to `[0, 1]`.
pub fn image_from_pgm(text: &str) -> Result<ImageGrid> {
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    let (mut lo, mut hi) = (None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let (body, comment) = match raw.find('#') {
            Some(p) => (&raw[..p], Some(&raw[p + 1..])),
            None => (raw, None),
        };
        if let Some(c) = comment {
            let mut parts = c.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("min"), Some(v)) => lo = Some(parse_f64(v, line)?),
                (Some("max"), Some(v)) => hi = Some(parse_f64(v, line)?),
                _ => {}
            }
        }
        tokens.extend(body.split_whitespace().map(|t| (line, t)));
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "P2")) => {}
        Some((line, t)) => {
            return Err(SepError::Parse {
                line,
                msg: format!("expected P2 magic, found {t:?}"),
            })
        }
        None => {
            return Err(SepError::Parse {
                line: 1,
                msg: "empty PGM file".into(),
            })
        }
    }
    let mut header = [0u32; 3];
    for h in header.iter_mut() {
        let (line, t) = it.next().ok_or(SepError::Parse {
            line: 1,
            msg: "truncated PGM header".into(),
        })?;
        *h = t.parse().map_err(|_| SepError::Parse {
            line,
            msg: format!("bad header field {t:?}"),
        })?;
    }
    let [cols, rows, maxval] = header;
    if maxval == 0 {
        return Err(SepError::Parse {
            line: 1,
            msg: "maxval must be positive".into(),
        });
    }
    let (lo, hi) = (lo.unwrap_or(0.0), hi.unwrap_or(1.0));
    let mut values = Vec::with_capacity((rows * cols) as usize);
    for (line, t) in it {
        let q: u32 = t.parse().map_err(|_| SepError::Parse {
            line,
            msg: format!("bad sample {t:?}"),
        })?;
        if q > maxval {
            return Err(SepError::Parse {
                line,
                msg: format!("sample {q} exceeds maxval {maxval}"),
            });
        }
        values.push(lo + (hi - lo) * q as f64 / maxval as f64);
    }
    if values.len() != (rows * cols) as usize {
        return Err(SepError::Parse {
            line: text.lines().count(),
            msg: format!("expected {} samples, found {}", rows * cols, values.len()),
        });
    }
    ImageGrid::new(rows as usize, cols as usize, values)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads CSV, or PGM when the extension is `.pgm`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let text = read_text(path)?;
    if is_pgm(path) {
        image_from_pgm(&text)
    } else {
        image_from_csv(&text)
    }
}

pub fn write_image(path: &Path, grid: &ImageGrid) -> Result<()> {
    let text = if is_pgm(path) {
        image_to_pgm(grid)
    } else {
        image_to_csv(grid)
    };
    write_text(path, &text)
}

pub const CHAINS_HEADER: &str = "chain,iter,value";

/// Long format, chains and iterations numbered from 1.
pub fn chains_to_csv(c: &ChainSet) -> String {
    let mut out = String::from(CHAINS_HEADER);
    out.push('\n');
    for (j, chain) in c.chains().iter().enumerate() {
        for (t, v) in chain.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", j + 1, t + 1, v);
        }
    }
    out
}

/// Chains must appear in order with consecutive iteration numbers.
pub fn chains_from_csv(text: &str) -> Result<ChainSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CHAINS_HEADER => {}
        Some((i, h)) => {
            return Err(SepError::Parse {
                line: i + 1,
                msg: format!("expected header {CHAINS_HEADER:?}, found {:?}", h.trim()),
            })
        }
        None => {
            return Err(SepError::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut chains: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(SepError::Parse {
                line,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let index = |t: &str| -> Result<usize> {
            t.trim().parse::<usize>().map_err(|_| SepError::Parse {
                line,
                msg: format!("bad index {:?}", t.trim()),
            })
        };
        let (j, t, v) = (index(fields[0])?, index(fields[1])?, parse_f64(fields[2], line)?);
        if j == chains.len() + 1 {
            chains.push(Vec::new());
        }
        if j != chains.len() || t != chains[j - 1].len() + 1 {
            return Err(SepError::Parse {
                line,
                msg: format!("out-of-order entry chain {j} iter {t}"),
            });
        }
        chains[j - 1].push(v);
    }
    ChainSet::new(chains)
}

pub fn write_chains(path: &Path, c: &ChainSet) -> Result<()> {
    write_text(path, &chains_to_csv(c))
}

pub fn read_chains(path: &Path) -> Result<ChainSet> {
    chains_from_csv(&read_text(path)?)
}

/// Two-column `theta,density` curve.
pub fn curve_to_csv(theta: &[f64], density: &[f64]) -> String {
    let mut out = String::from("theta,density\n");
    for (t, d) in theta.iter().zip(density) {
        let _ = writeln!(out, "{t},{d}");
    }
    out
}

pub fn write_curve(path: &Path, theta: &[f64], density: &[f64]) -> Result<()> {
    if theta.len() != density.len() {
        return Err(SepError::Shape(format!(
            "{} thetas but {} densities",
            theta.len(),
            density.len()
        )));
    }
    write_text(path, &curve_to_csv(theta, density))
}

pub fn read_curve(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "theta,density")) => {}
        _ => {
            return Err(SepError::Parse {
                line: 1,
                msg: "expected header \"theta,density\"".into(),
            })
        }
    }
    let (mut theta, mut density) = (Vec::new(), Vec::new());
    for (i, raw) in lines {
        let Some((a, b)) = raw.split_once(',') else {
            return Err(SepError::Parse {
                line: i + 1,
                msg: "expected two fields".into(),
            });
        };
        theta.push(parse_f64(a, i + 1)?);
        density.push(parse_f64(b, i + 1)?);
    }
    Ok((theta, density))
}

/// Ordered `key: value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Report::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = raw.split_once(": ") else {
                return Err(SepError::Parse {
                    line: i + 1,
                    msg: format!("expected `key: value`, found {raw:?}"),
                });
            };
            r.push(k.trim(), v.trim());
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}
