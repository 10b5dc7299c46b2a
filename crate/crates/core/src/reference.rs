//! The shipped CFO debate: Anne and John persona sheets, the run
//! configuration and the keyword sets used to analyze it.

use crate::analysis::{KeywordFile, KeywordSet};
use crate::config::RunConfig;
use crate::persona::{load_persona_toml, PersonaSpec, ValidationMode};

pub const ANNE_TOML: &str = include_str!("../assets/personas/anne.toml");
pub const JOHN_TOML: &str = include_str!("../assets/personas/john.toml");
pub const RUN_CONFIG_TOML: &str = include_str!("../assets/cfo_debate.toml");
pub const KEYWORDS_TOML: &str = include_str!("../assets/keywords/cfo.toml");

pub fn anne() -> PersonaSpec {
    load_persona_toml(ANNE_TOML, ValidationMode::Strict)
        .expect("bundled sheet is valid")
        .persona
}

pub fn john() -> PersonaSpec {
    load_persona_toml(JOHN_TOML, ValidationMode::Strict)
        .expect("bundled sheet is valid")
        .persona
}

pub fn run_config() -> RunConfig {
    RunConfig::from_toml_str(RUN_CONFIG_TOML).expect("bundled config is valid")
}

pub fn keyword_sets() -> Vec<KeywordSet> {
    KeywordFile::from_toml_str(KEYWORDS_TOML)
        .expect("bundled keywords are valid")
        .into_sets()
        .expect("bundled keywords are valid")
}
