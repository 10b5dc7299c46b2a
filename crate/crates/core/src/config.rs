//! Run configuration files: persona sheet paths, keyword file and the debate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{KeywordFile, KeywordSet};
use crate::orchestrator::DebateConfig;
use crate::persona::{load_persona_toml, PersonaRegistry, ValidationError, ValidationMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Paths relative to the config file.
    #[serde(default)]
    pub persona_files: Vec<PathBuf>,
    #[serde(default)]
    pub keywords_file: Option<PathBuf>,
    pub debate: DebateConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid run config: {0}")]
    Parse(String),
    #[error("persona file {path}: {source}")]
    Persona {
        path: PathBuf,
        source: ValidationError,
    },
    #[error("keywords file {path}: {message}")]
    Keywords { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

/// A run config with its persona sheets and keyword sets loaded.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub registry: PersonaRegistry,
    pub keyword_sets: Vec<KeywordSet>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads the file and everything it references.
    pub fn load(path: &Path, mode: ValidationMode) -> Result<LoadedRun, ConfigError> {
        let config = Self::from_toml_str(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));

        let mut registry = PersonaRegistry::new();
        for rel in &config.persona_files {
            let p = base.join(rel);
            let sheet =
                load_persona_toml(&read(&p)?, mode).map_err(|source| ConfigError::Persona {
                    path: p.clone(),
                    source,
                })?;
            for w in &sheet.warnings {
                tracing::warn!(path = %p.display(), warning = ?w, "persona sheet warning");
            }
            registry.insert(sheet.persona);
        }

        let keyword_sets = match &config.keywords_file {
            Some(rel) => {
                let p = base.join(rel);
                KeywordFile::from_toml_str(&read(&p)?)
                    .and_then(KeywordFile::into_sets)
                    .map_err(|e| ConfigError::Keywords {
                        path: p.clone(),
                        message: e.to_string(),
                    })?
            }
            None => Vec::new(),
        };

        Ok(LoadedRun {
            config,
            registry,
            keyword_sets,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::reference;

    #[test]
    fn reference_config_parses() {
        let c = reference::run_config();
        assert_eq!(c.debate.total_turns, 50);
        assert_eq!(c.debate.inter_turn_delay, Duration::from_secs(15));
        assert_eq!(c.debate.opening_speaker.as_str(), "anne");
        assert!(c
            .debate
            .opening_question
            .starts_with("We, CFOs, are having difficulty"));
        assert_eq!(c.debate.decoding, crate::persona::DecodingParams::default());
    }

    #[test]
    fn load_from_disk_resolves_relative_paths() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/cfo_debate.toml");
        let run = RunConfig::load(&path, ValidationMode::Strict).unwrap();
        assert_eq!(run.registry.len(), 2);
        assert_eq!(run.keyword_sets.len(), 2);
    }

    #[test]
    fn missing_opening_question_is_a_parse_error() {
        let text = r#"
            [debate]
            personas = ["a", "b"]
            opening_speaker = "a"
            business_context = "x"
        "#;
        assert!(matches!(
            RunConfig::from_toml_str(text),
            Err(ConfigError::Parse(_))
        ));
    }
}
