//! The experiment file shared by every command.
//!
//! ```toml
//! oracle = "landscape.json"   # optional; the bundled landscape otherwise
//! init_scale = 1.0
//!
//! [train]
//! lambda = 2.0
//! iterations = 4
//!
//! [init]
//! min_mean_naturalness = 0.5
//!
//! [service]
//! training_min_raters = 1
//! ```
//!
//! Every table and key is optional. Files ending in `.json` are read as JSON,
//! everything else as TOML. A relative `oracle` path is resolved against the
//! directory of the experiment file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::GeneratorArch;
use crate::oracle::{OracleConfig, OracleError};
use crate::trainer::{InitCriteria, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Rater requirements for batches sent to the evaluation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub training_min_raters: usize,
    pub map_min_raters: usize,
    pub poll_interval_ms: u64,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings { training_min_raters: 1, map_min_raters: 5, poll_interval_ms: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub arch: GeneratorArch,
    pub init: InitCriteria,
    /// Half-width of the uniform initial weight distribution.
    pub init_scale: f64,
    pub oracle: Option<PathBuf>,
    pub service: ServiceSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            arch: GeneratorArch::default(),
            init: InitCriteria::default(),
            init_scale: 1.0,
            oracle: None,
            service: ServiceSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let parse_err = |detail: String| ConfigError::Parse { path: path.to_path_buf(), detail };
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let Some(oracle) = &cfg.oracle {
            if oracle.is_relative() {
                cfg.oracle = Some(path.parent().unwrap_or(Path::new(".")).join(oracle));
            }
        }
        Ok(cfg)
    }

    /// The simulated landscape this experiment refers to.
    pub fn oracle_config(&self) -> Result<OracleConfig, ConfigError> {
        Ok(match &self.oracle {
            Some(p) => OracleConfig::load(p)?,
            None => OracleConfig::reference(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.toml");
        std::fs::write(&p, "").unwrap();
        assert_eq!(ExperimentConfig::load(&p).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("e.toml");
        let j = dir.path().join("e.json");
        std::fs::write(&t, "oracle = \"land.json\"\n[train]\nlambda = 0.5\nseed = 9\n").unwrap();
        std::fs::write(&j, r#"{"oracle": "land.json", "train": {"lambda": 0.5, "seed": 9}}"#).unwrap();
        let a = ExperimentConfig::load(&t).unwrap();
        assert_eq!(a, ExperimentConfig::load(&j).unwrap());
        assert_eq!(a.train.lambda, 0.5);
        assert_eq!(a.train.alpha, 0.0005);
        assert_eq!(a.oracle.unwrap(), dir.path().join("land.json"));
    }

    #[test]
    fn bad_value_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.toml");
        std::fs::write(&p, "[train]\nlambda = \"two\"\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(ConfigError::Parse { .. })));
        assert!(matches!(ExperimentConfig::load(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
    }
}
