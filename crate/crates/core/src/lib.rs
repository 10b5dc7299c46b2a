//! Two-agent debate engine.
//!
//! Persona sheets are compiled into system prompts ([`persona`]), a pair of
//! personas debates through a chat-completion backend ([`provider`]) under a
//! human-steerable state machine ([`orchestrator`]), transcripts are written
//! to disk ([`persistence`]) and analyzed ([`analysis`]).

pub mod analysis;
pub mod clock;
pub mod config;
pub mod orchestrator;
pub mod persistence;
pub mod persona;
pub mod provider;
pub mod reference;

pub use orchestrator::{
    new_debate, speaker_for, Command, Debate, DebateConfig, DebateState, Phase, RunOutcome, Turn,
    TurnError,
};
pub use persona::{PersonaId, PersonaRegistry, PersonaSpec};
