//! Flat `key = value` experiment files.
//!
//! ```text
//! # Lorenz-96 baseline
//! benchmark = lorenz96
//! filter = stochastic, etkf
//! mode = conventional, i1, car
//! runs = 100
//! seed = 42
//! noise_scale = 1
//! out = results/lorenz
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use crate::filter::{FilterConfig, Mode, Variant};

pub const DEFAULT_CURVE_RUNS: usize = 100;
pub const DEFAULT_SWEEP_RUNS: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    Slam,
    Lorenz96,
}

impl BenchmarkKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Slam => "slam",
            BenchmarkKind::Lorenz96 => "lorenz96",
        }
    }
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slam" => Ok(BenchmarkKind::Slam),
            "lorenz96" | "l96" | "lorenz" => Ok(BenchmarkKind::Lorenz96),
            other => Err(format!("unknown benchmark `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkKind,
    pub variants: Vec<Variant>,
    pub modes: Vec<Mode>,
    /// `None` picks the per-subcommand default.
    pub runs: Option<usize>,
    pub base_seed: u64,
    /// Empty picks the per-subcommand default.
    pub noise_scales: Vec<f64>,
    pub steps: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub out_dir: PathBuf,
    pub rho: f64,
    pub beta0: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkKind::Lorenz96,
            variants: Variant::ALL.to_vec(),
            modes: Mode::ALL.to_vec(),
            runs: None,
            base_seed: 0,
            noise_scales: Vec::new(),
            steps: None,
            ensemble_size: None,
            out_dir: PathBuf::from("results"),
            rho: FilterConfig::DEFAULT_RHO,
            beta0: FilterConfig::DEFAULT_BETA0,
            lambda: FilterConfig::DEFAULT_LAMBDA,
            mu: FilterConfig::DEFAULT_MU,
        }
    }
}

/// Splits config text into `(key, value)` pairs, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_ascii_lowercase(), v.trim().to_string()));
    }
    Ok(out)
}

fn list<T: FromStr + Clone>(key: &str, value: &str, all: &[T]) -> Result<Vec<T>, ConfigError> {
    if value.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad(key, value))
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| bad(key, value))
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one setting; used for both file entries and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "benchmark" => self.benchmark = value.parse().map_err(|_| bad(key, value))?,
            "filter" | "variant" => self.variants = list(key, value, &Variant::ALL)?,
            "mode" => self.modes = list(key, value, &Mode::ALL)?,
            "runs" => self.runs = Some(scalar(key, value)?),
            "seed" | "base_seed" => self.base_seed = scalar(key, value)?,
            "noise_scale" | "noise_scales" | "scale" => {
                self.noise_scales = value
                    .split(',')
                    .map(|s| scalar(key, s))
                    .collect::<Result<_, _>>()?
            }
            "steps" => self.steps = Some(scalar(key, value)?),
            "ensemble_size" | "n" => self.ensemble_size = Some(scalar(key, value)?),
            "out" | "out_dir" => self.out_dir = PathBuf::from(value),
            "rho" => self.rho = scalar(key, value)?,
            "beta0" => self.beta0 = scalar(key, value)?,
            "lambda" => self.lambda = scalar(key, value)?,
            "mu" => self.mu = scalar(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Every selected variant × mode combination, variant-major.
    pub fn filters(&self) -> Vec<FilterConfig> {
        self.variants
            .iter()
            .flat_map(|v| {
                self.modes.iter().map(move |m| {
                    FilterConfig::new(*v, *m)
                        .with_rho(self.rho)
                        .with_compensation(self.beta0, self.lambda, self.mu)
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs == Some(0) {
            return Err(ConfigError::Invalid("runs must be at least 1".into()));
        }
        if self.steps == Some(0) {
            return Err(ConfigError::Invalid("steps must be at least 1".into()));
        }
        if matches!(self.ensemble_size, Some(n) if n < 2) {
            return Err(ConfigError::Invalid(
                "ensemble_size must be at least 2".into(),
            ));
        }
        if self.variants.is_empty() || self.modes.is_empty() {
            return Err(ConfigError::Invalid("no filters selected".into()));
        }
        if let Some(s) = self
            .noise_scales
            .iter()
            .find(|s| !(s.is_finite() && **s > 0.0))
        {
            return Err(ConfigError::Invalid(format!(
                "noise scale must be positive, got {s}"
            )));
        }
        for f in self.filters() {
            f.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}
