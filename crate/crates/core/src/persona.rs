//! Persona sheets and their compilation into system prompts.
//!
//! A persona is a named character with a narrative and a sheet of behavioral
//! scales in `[0, 1]`. Compilation maps every scale to a prose directive via a
//! fixed banding table, so the same sheet always produces the same prompt.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag of the banding table used by [`compile_system_prompt`].
pub const BANDING_TABLE_VERSION: u32 = 1;

/// Behavioral scale names understood by strict validation.
pub const KNOWN_PARAMETERS: [&str; 29] = [
    "Adaptability to Change",
    "Argumentative Style",
    "Cautiousness in Speculative Scenarios",
    "Conventional Approach to Cost Management",
    "Dynamic Context Awareness",
    "Emphasis on Short-Term Strategies",
    "Financial Conservatism",
    "Focus on Compliance",
    "Focus on Long-Term Strategy",
    "Growth Strategies",
    "History-Based Decision Making",
    "Inclusion of Case Studies",
    "Incorporation of Informal Language",
    "Opening to Speculative Scenarios",
    "Penalty for Absence of Risks",
    "Response Length",
    "Risk Propensity",
    "Role-play Directive",
    "Role-play Driven by Innovations",
    "Sensitivity to Financial Sector Trends",
    "Sustainability Consideration",
    "Technology innovation",
    "Use of Financial Terminology",
    "Use of Proactive Language",
    "Weighting of Certain Keywords",
    "Intensive Use of Real-Time Data",
    "Logical and Reasoning",
    "Formal Language Tone",
    "Casual Language Tone",
];

/// Opaque persona identifier, e.g. `anne`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaId(String);

impl PersonaId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PersonaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PersonaId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// A validated persona sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub id: PersonaId,
    pub display_name: String,
    pub role_title: String,
    pub narrative: String,
    /// Scale values keyed by parameter name, iterated in lexicographic order.
    pub parameters: BTreeMap<String, f64>,
}

/// One `name = value` row of a persona file, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParameter {
    pub name: String,
    pub value: f64,
}

/// A persona document as parsed from disk. Every field is optional here so
/// that validation, not deserialization, reports what is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawPersona {
    pub id: Option<String>,
    pub display_name: Option<String>,
    pub role_title: Option<String>,
    pub narrative: Option<String>,
    #[serde(default)]
    pub parameters: Vec<RawParameter>,
}

impl RawPersona {
    /// Parses the TOML persona file format.
    pub fn from_toml_str(text: &str) -> Result<Self, ValidationError> {
        toml::from_str(text).map_err(|e| ValidationError::Parse(e.to_string()))
    }
}

impl From<&PersonaSpec> for RawPersona {
    fn from(spec: &PersonaSpec) -> Self {
        Self {
            id: Some(spec.id.as_str().to_owned()),
            display_name: Some(spec.display_name.clone()),
            role_title: Some(spec.role_title.clone()),
            narrative: Some(spec.narrative.clone()),
            parameters: spec
                .parameters
                .iter()
                .map(|(name, value)| RawParameter {
                    name: name.clone(),
                    value: *value,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationWarning {
    UnknownParameter { name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPersona {
    pub persona: PersonaSpec,
    pub warnings: Vec<ValidationWarning>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("parameter {name:?} has value {value} outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("parameter {0:?} appears more than once")]
    DuplicateParameter(String),
    #[error("missing or empty field `{0}`")]
    MissingField(&'static str),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("persona file could not be parsed: {0}")]
    Parse(String),
}

fn required(value: &Option<String>, field: &'static str) -> Result<String, ValidationError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v.clone()),
        _ => Err(ValidationError::MissingField(field)),
    }
}

/// Checks a raw sheet and turns it into a [`PersonaSpec`].
pub fn validate_persona(
    raw: &RawPersona,
    mode: ValidationMode,
) -> Result<ValidatedPersona, ValidationError> {
    let id = required(&raw.id, "id")?;
    let display_name = required(&raw.display_name, "display_name")?;
    let role_title = required(&raw.role_title, "role_title")?;
    let narrative = raw.narrative.clone().unwrap_or_default();

    let mut parameters = BTreeMap::new();
    let mut warnings = Vec::new();
    for p in &raw.parameters {
        if !(0.0..=1.0).contains(&p.value) {
            return Err(ValidationError::OutOfRange {
                name: p.name.clone(),
                value: p.value,
            });
        }
        if !KNOWN_PARAMETERS.contains(&p.name.as_str()) {
            match mode {
                ValidationMode::Strict => {
                    return Err(ValidationError::UnknownParameter(p.name.clone()))
                }
                ValidationMode::Lenient => warnings.push(ValidationWarning::UnknownParameter {
                    name: p.name.clone(),
                }),
            }
        }
        if parameters.insert(p.name.clone(), p.value).is_some() {
            return Err(ValidationError::DuplicateParameter(p.name.clone()));
        }
    }

    Ok(ValidatedPersona {
        persona: PersonaSpec {
            id: PersonaId(id),
            display_name,
            role_title,
            narrative,
            parameters,
        },
        warnings,
    })
}

/// Parses and validates a persona file in one step.
pub fn load_persona_toml(
    text: &str,
    mode: ValidationMode,
) -> Result<ValidatedPersona, ValidationError> {
    validate_persona(&RawPersona::from_toml_str(text)?, mode)
}

/// Strength with which a scale value is rendered into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Omit,
    Downplay,
    Moderate,
    Strong,
    Defining,
}

impl Band {
    pub fn for_value(value: f64) -> Band {
        if value <= 0.0 {
            Band::Omit
        } else if value < 0.34 {
            Band::Downplay
        } else if value < 0.67 {
            Band::Moderate
        } else if value < 1.0 {
            Band::Strong
        } else {
            Band::Defining
        }
    }

    /// Directive wording; `None` for [`Band::Omit`].
    pub fn phrase(self) -> Option<&'static str> {
        match self {
            Band::Omit => None,
            Band::Downplay => Some("downplay"),
            Band::Moderate => Some("moderately apply"),
            Band::Strong => Some("strongly emphasize"),
            Band::Defining => Some("treat as a defining trait"),
        }
    }
}

/// Scenario text bound into every compiled prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusinessContext(String);

impl BusinessContext {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledPrompt {
    pub system_text: String,
    pub directive_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("business context is empty")]
    EmptyContext,
}

pub const DIRECTIVE_HEADING: &str = "## Behavioral directives";

/// Renders one directive line, e.g. `- Strongly emphasize: Risk Propensity (0.9)`.
pub fn directive_line(name: &str, value: f64) -> Option<String> {
    let phrase = Band::for_value(value).phrase()?;
    let mut chars = phrase.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or(' ');
    Some(format!("- {first}{}: {name} ({value})", chars.as_str()))
}

/// Compiles a persona and scenario into a system prompt.
///
/// Sections appear in a fixed order: role preamble, narrative, business
/// context, directive block (one line per non-omitted scale, lexicographic by
/// name) and the closing role-play instruction.
pub fn compile_system_prompt(
    persona: &PersonaSpec,
    context: &BusinessContext,
) -> Result<CompiledPrompt, CompileError> {
    let context = context.as_str().trim();
    if context.is_empty() {
        return Err(CompileError::EmptyContext);
    }

    let mut out = String::new();
    out.push_str(&format!(
        "You are {}, {}.\n\n",
        persona.display_name.trim(),
        persona.role_title.trim()
    ));
    let narrative = persona.narrative.trim();
    if !narrative.is_empty() {
        out.push_str("## Character\n");
        out.push_str(narrative);
        out.push_str("\n\n");
    }
    out.push_str("## Business context\n");
    out.push_str(context);
    out.push_str("\n\n");

    out.push_str(DIRECTIVE_HEADING);
    out.push('\n');
    let mut directive_count = 0;
    for (name, value) in &persona.parameters {
        if let Some(line) = directive_line(name, *value) {
            out.push_str(&line);
            out.push('\n');
            directive_count += 1;
        }
    }
    out.push('\n');
    out.push_str(&format!(
        "Stay in character; respond as {}.",
        persona.display_name.trim()
    ));

    Ok(CompiledPrompt {
        system_text: out,
        directive_count,
    })
}

/// Personas known to a process, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PersonaRegistry {
    personas: BTreeMap<PersonaId, PersonaSpec>,
}

impl PersonaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces; returns the previous sheet with the same id.
    pub fn insert(&mut self, persona: PersonaSpec) -> Option<PersonaSpec> {
        self.personas.insert(persona.id.clone(), persona)
    }

    pub fn get(&self, id: &PersonaId) -> Option<&PersonaSpec> {
        self.personas.get(id)
    }

    pub fn contains(&self, id: &PersonaId) -> bool {
        self.personas.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PersonaSpec> {
        self.personas.values()
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }
}

/// Sampling controls sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

pub const DEFAULT_MODEL_ID: &str = "gpt-3.5-turbo";

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_p: 0.8,
            presence_penalty: 0.8,
            frequency_penalty: 0.8,
            max_tokens: 100,
            model_id: DEFAULT_MODEL_ID.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodingError {
    #[error("{field} = {value} outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("model id is empty")]
    EmptyModel,
}

impl DecodingParams {
    pub const REAL_RANGE: (f64, f64) = (0.0, 2.0);
    pub const MAX_TOKENS_RANGE: (u32, u32) = (1, 4096);

    pub fn validate(&self) -> Result<(), DecodingError> {
        let (lo, hi) = Self::REAL_RANGE;
        for (field, value) in [
            ("temperature", self.temperature),
            ("top_p", self.top_p),
            ("presence_penalty", self.presence_penalty),
            ("frequency_penalty", self.frequency_penalty),
        ] {
            if !(lo..=hi).contains(&value) {
                return Err(DecodingError::OutOfRange {
                    field,
                    value,
                    min: lo,
                    max: hi,
                });
            }
        }
        let (tlo, thi) = Self::MAX_TOKENS_RANGE;
        if !(tlo..=thi).contains(&self.max_tokens) {
            return Err(DecodingError::OutOfRange {
                field: "max_tokens",
                value: self.max_tokens as f64,
                min: tlo as f64,
                max: thi as f64,
            });
        }
        if self.model_id.trim().is_empty() {
            return Err(DecodingError::EmptyModel);
        }
        Ok(())
    }
}

/// Decoding parameters used for a given persona. Both participants share
/// the global parameters; persona scales never feed into sampling.
pub fn decoding_params_for(globals: &DecodingParams, _persona: &PersonaSpec) -> DecodingParams {
    globals.clone()
}

/// Lines of the directive block of a compiled prompt.
pub fn directive_lines(system_text: &str) -> Vec<&str> {
    system_text
        .lines()
        .skip_while(|l| *l != DIRECTIVE_HEADING)
        .skip(1)
        .take_while(|l| l.starts_with("- "))
        .collect()
}

/// Names of parameters that [`compile_system_prompt`] renders as directives.
pub fn rendered_parameters(persona: &PersonaSpec) -> BTreeSet<&str> {
    persona
        .parameters
        .iter()
        .filter(|(_, v)| Band::for_value(**v) != Band::Omit)
        .map(|(k, _)| k.as_str())
        .collect()
}
