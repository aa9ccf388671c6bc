//! Scenario files: TOML with unit-suffixed keys.

use std::path::{Path, PathBuf};

use thiserror::Error;

use canal_core::engine::{EngineError, MapSource, ScenarioConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: map file {map} does not exist")]
    MissingMap { path: PathBuf, map: PathBuf },
}

/// Reads, resolves and validates a scenario file. Relative map paths are
/// taken relative to the scenario file.
pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario_str(&text, base, path)
}

/// Parses scenario text. `origin` only labels error messages.
pub fn parse_scenario_str(text: &str, base: &Path, origin: &Path) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    if let MapSource::Pgm { image, meta } = &mut cfg.map {
        for p in [image, meta] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(ConfigError::MissingMap {
                    path: origin.to_path_buf(),
                    map: p.clone(),
                });
            }
        }
    }
    cfg.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_path_buf(),
        message: match e {
            EngineError::Config(m) => m,
            other => other.to_string(),
        },
    })?;
    Ok(cfg)
}

/// Serializes a scenario back to TOML.
pub fn scenario_to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario serializes to TOML")
}
