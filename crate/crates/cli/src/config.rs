use std::path::{Path, PathBuf};

use cpegraph::inconsistency::HeuristicConfig;
use serde::Deserialize;
use serde_json::json;

use crate::error::CliError;

pub const DEFAULT_TAU: f64 = 0.8;

/// Settings read from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub feeds: Vec<PathBuf>,
    pub cpe_dictionary: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub review: Option<PathBuf>,
    pub canonical_dictionary: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub store_dir: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub heuristics: HeuristicConfig,
    pub tau: Option<f64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("invalid config file: {e}"), json!({ "path": path.display().to_string() }))
        })?;
        cfg.heuristics.validate().map_err(|e| CliError::config(e.to_string(), json!({ "field": "heuristics" })))?;
        Ok(cfg)
    }
}

/// The flag value if given, else the config value; errors when neither is set.
pub fn require(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::config(format!("missing --{name}"), json!({ "option": name })))?;
    existing(path, name)
}

pub fn optional(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>, CliError> {
    flag.or_else(|| config.clone()).map(|p| existing(p, name)).transpose()
}

pub fn existing(path: PathBuf, name: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::config(
            format!("--{name}: {} does not exist", path.display()),
            json!({ "option": name, "path": path.display().to_string() }),
        ))
    }
}

pub fn feeds(flag: Vec<PathBuf>, config: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let list = if flag.is_empty() { config.feeds.clone() } else { flag };
    if list.is_empty() {
        return Err(CliError::config("missing --feed", json!({ "option": "feed" })));
    }
    list.into_iter().map(|p| existing(p, "feed")).collect()
}

pub fn tau(flag: Option<f64>, config: &PipelineConfig) -> Result<f64, CliError> {
    let tau = flag.or(config.tau).unwrap_or(DEFAULT_TAU);
    if tau > 0.0 && tau <= 1.0 {
        Ok(tau)
    } else {
        Err(CliError::config(format!("tau must be in (0, 1], got {tau}"), json!({ "option": "tau" })))
    }
}
