//! TOML experiment configs.
//!
//! Relative paths inside a config resolve against the config file's
//! directory, so a config and its data can move together.

use std::path::{Path, PathBuf};

use dedpul_core::{DedpulConfig, DensitySettings, Laplace, Method, NtcConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Laplace components of the reference sweep.
pub const DEFAULT_NEGATIVES: [Laplace; 5] = [
    Laplace::new(1.0, 1.0),
    Laplace::new(2.0, 1.0),
    Laplace::new(4.0, 1.0),
    Laplace::new(0.0, 2.0),
    Laplace::new(0.0, 4.0),
];

pub const DEFAULT_ALPHAS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// Where the data of an `estimate` or `dcurve` run comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Synthetic {
        positive: Laplace,
        negative: Laplace,
        alpha: f64,
        #[serde(default = "default_n_p")]
        n_p: usize,
        #[serde(default = "default_n_u")]
        n_u: usize,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        positive_value: String,
        /// Treat the file as fully labeled and draw a PU split from it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        benchmark: Option<BenchmarkSplit>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSplit {
    pub n_p: usize,
    pub alpha: f64,
}

fn default_n_p() -> usize {
    1000
}

fn default_n_u() -> usize {
    10000
}

fn default_repeats() -> usize {
    1
}

fn default_sweep_repeats() -> usize {
    10
}

fn default_methods() -> Vec<Method> {
    vec![Method::Dedpul]
}

fn default_sweep_methods() -> Vec<Method> {
    vec![Method::Dedpul, Method::En, Method::SimpleAlpha]
}

fn default_folds() -> usize {
    5
}

fn default_em_tol() -> f64 {
    DedpulConfig::default().em_tol
}

fn default_max_d() -> f64 {
    DedpulConfig::default().max_d
}

fn default_eps() -> f64 {
    DedpulConfig::default().eps
}

fn default_quantile() -> f64 {
    DedpulConfig::default().quantile
}

fn default_positive() -> Laplace {
    Laplace::new(0.0, 1.0)
}

fn default_negatives() -> Vec<Laplace> {
    DEFAULT_NEGATIVES.to_vec()
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub include_posteriors: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    /// CSV with columns `split` (`p` or `u`) and `y`; replaces the classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_predictions: Option<PathBuf>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Defaults to the small network for synthetic data and the wider one
    /// for CSV data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ntc: Option<NtcConfig>,
    #[serde(default)]
    pub density: DensitySettings,
    #[serde(default = "default_em_tol")]
    pub em_tol: f64,
    #[serde(default = "default_max_d")]
    pub max_d: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweep_repeats")]
    pub repeats: usize,
    #[serde(default = "default_sweep_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub include_posteriors: bool,
    #[serde(default = "default_positive")]
    pub positive: Laplace,
    #[serde(default = "default_negatives")]
    pub negatives: Vec<Laplace>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_n_p")]
    pub n_p: usize,
    #[serde(default = "default_n_u")]
    pub n_u: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "NtcConfig::synthetic")]
    pub ntc: NtcConfig,
    #[serde(default)]
    pub density: DensitySettings,
    #[serde(default = "default_em_tol")]
    pub em_tol: f64,
    #[serde(default = "default_max_d")]
    pub max_d: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

fn check_common(repeats: usize, methods: &[Method], folds: usize) -> Result<(), ConfigError> {
    if repeats == 0 {
        return Err(ConfigError::Invalid("repeats must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(ConfigError::Invalid("methods must not be empty".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(ConfigError::Invalid(format!("method `{}` listed twice", m.name())));
        }
    }
    if folds < 2 {
        return Err(ConfigError::Invalid(format!("folds must be at least 2, got {folds}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_common(self.repeats, &self.methods, self.folds)?;
        match (&self.source, &self.external_predictions) {
            (None, None) => Err(ConfigError::Invalid(
                "set either `source` or `external_predictions`".into(),
            )),
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "`source` and `external_predictions` are mutually exclusive".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn ntc_config(&self) -> NtcConfig {
        self.ntc.clone().unwrap_or_else(|| match self.source {
            Some(Source::Csv { .. }) => NtcConfig::tabular(),
            _ => NtcConfig::synthetic(),
        })
    }

    pub fn pipeline(&self) -> DedpulConfig {
        DedpulConfig {
            folds: self.folds,
            ntc: self.ntc_config(),
            density: self.density.clone(),
            em_tol: self.em_tol,
            max_d: self.max_d,
            eps: self.eps,
            smooth: true,
            quantile: self.quantile,
        }
    }

    /// Rewrites relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(Source::Csv { path, .. }) = &mut self.source {
            *path = base.join(&*path);
        }
        if let Some(p) = &mut self.external_predictions {
            *p = base.join(&*p);
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_common(self.repeats, &self.methods, self.folds)?;
        if self.negatives.is_empty() || self.alphas.is_empty() {
            return Err(ConfigError::Invalid("negatives and alphas must not be empty".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> DedpulConfig {
        DedpulConfig {
            folds: self.folds,
            ntc: self.ntc.clone(),
            density: self.density.clone(),
            em_tol: self.em_tol,
            max_d: self.max_d,
            eps: self.eps,
            smooth: true,
            quantile: self.quantile,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn parse_sweep(text: &str) -> Result<SweepConfig, toml::de::Error> {
    toml::from_str(text)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = parse_experiment(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    cfg.validate()?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    Ok(cfg)
}

pub fn load_sweep(path: &Path) -> Result<SweepConfig, ConfigError> {
    let cfg = parse_sweep(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Hex SHA-256 of the compact JSON form. Object keys come out sorted, so the
/// hash does not depend on field order in the source file.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let value = serde_json::to_value(cfg).expect("configs serialize");
    let canonical = serde_json::to_string(&value).expect("values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Seed of one `(component pair, alpha, repeat)` cell, independent of which
/// other cells a sweep contains.
pub fn cell_seed(master: u64, positive: Laplace, negative: Laplace, alpha: f64, repeat: usize) -> u64 {
    let key = format!(
        "{master}|{}|{}|{}|{}|{alpha}|{repeat}",
        positive.loc, positive.scale, negative.loc, negative.scale
    );
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seed of repeat `repeat` of a single-dataset run.
pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}|{repeat}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
