use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use rsmv::dc::SolverConfig;
use rsmv::market::{factor_market, MarketModel, ReturnsTable};

/// Bad flags or config; exits with the usage code.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

pub enum Source<'a> {
    Returns(&'a Path, &'a str),
    Market(&'a Path),
    Synthetic(usize, u64),
}

pub fn load_market(src: Source<'_>) -> Result<MarketModel> {
    match src {
        Source::Returns(p, freq) => {
            let table = ReturnsTable::from_csv_path(p, freq).with_context(|| format!("reading returns {}", p.display()))?;
            Ok(MarketModel::estimate(&table, 0.0)?)
        }
        Source::Market(p) => MarketModel::from_json_path(p).with_context(|| format!("reading market {}", p.display())),
        Source::Synthetic(n, seed) => Ok(factor_market(seed, n)?),
    }
}

fn number(s: &str, what: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => usage(format!("{what}: '{s}' is not a finite number")),
    }
}

/// A single value, a comma list, or `a:b:step` (inclusive of `b`).
pub fn parse_grid(s: &str, what: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => s.split(',').map(|v| number(v, what)).collect(),
        3 => {
            let (a, b, step) = (number(parts[0], what)?, number(parts[1], what)?, number(parts[2], what)?);
            if step == 0.0 || (b - a) * step < 0.0 {
                return usage(format!("{what}: step {step} does not lead from {a} to {b}"));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return usage(format!("{what}: grid has {count} points"));
            }
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        _ => usage(format!("{what}: expected a value, a comma list or a:b:step, got '{s}'")),
    }
}

pub fn parse_scalar(s: &str, what: &str) -> Result<f64> {
    match parse_grid(s, what)?.as_slice() {
        [v] => Ok(*v),
        _ => usage(format!("{what}: expected a single value, got '{s}'")),
    }
}

/// Per-asset costs: a scalar (expanded to every asset) or a file of numbers
/// separated by commas or whitespace.
pub fn parse_phi(s: &str, n: usize) -> Result<Vec<f64>> {
    if let Ok(v) = s.trim().parse::<f64>() {
        if !v.is_finite() {
            return usage(format!("phi: '{s}' is not finite"));
        }
        return Ok(vec![v; n]);
    }
    let path = PathBuf::from(s);
    if !path.is_file() {
        return usage(format!("phi: '{s}' is neither a number nor a file"));
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| number(t, &format!("phi entry {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != n {
        return usage(format!("phi file has {} entries for {n} assets", values.len()));
    }
    Ok(values)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NumOrStr {
    Num(f64),
    Str(String),
}

impl NumOrStr {
    pub fn text(&self) -> String {
        match self {
            NumOrStr::Num(v) => v.to_string(),
            NumOrStr::Str(s) => s.clone(),
        }
    }
}

/// Key-value config file. Top-level keys override the matching flags; the
/// `[algorithm]` table overrides solver defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kappa: Option<f64>,
    pub epsilon: Option<NumOrStr>,
    pub phi: Option<NumOrStr>,
    pub solver: Option<String>,
    pub t: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub algorithm: Option<SolverConfig>,
}

pub fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match toml::from_str(&text) {
        Ok(c) => Ok(c),
        Err(e) => usage(format!("config {}: {e}", path.display())),
    }
}

pub fn solver_config(file: &FileConfig, tol: Option<f64>) -> Result<SolverConfig> {
    let mut cfg = file.algorithm.unwrap_or_default();
    if let Some(tol) = file.tol.or(tol) {
        if !(tol > 0.0) {
            bail!(Usage(format!("tol must be positive, got {tol}")));
        }
        cfg.outer_tol = tol;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}
