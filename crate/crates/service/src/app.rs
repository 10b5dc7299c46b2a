//! Debate registry shared by the HTTP handlers.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use colloquy_core::analysis::{AnalysisError, KeywordSet};
use colloquy_core::orchestrator::{CommandError, OrchestratorError};
use colloquy_core::persistence::{TranscriptDocument, TranscriptWriter};
use colloquy_core::persona::{
    validate_persona, RawPersona, ValidatedPersona, ValidationError, ValidationMode,
};
use colloquy_core::provider::Completer;
use colloquy_core::{
    Command, Debate, DebateConfig, PersonaId, PersonaRegistry, PersonaSpec, Phase,
};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::events::EventLog;
use crate::report::{analyze_document, AnalysisView};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("debate {0} not found")]
    DebateNotFound(String),
    #[error("unknown persona {0}")]
    UnknownPersona(PersonaId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    IllegalTransition(CommandError),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("invalid persona: {0}")]
    InvalidPersona(#[from] ValidationError),
    #[error("persona {0} already exists")]
    PersonaExists(PersonaId),
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
}

impl From<OrchestratorError> for ServiceError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::UnknownPersona(id) => ServiceError::UnknownPersona(id),
            other => ServiceError::InvalidConfig(other.to_string()),
        }
    }
}

impl From<CommandError> for ServiceError {
    fn from(e: CommandError) -> Self {
        match e {
            CommandError::IllegalTransition { .. } => ServiceError::IllegalTransition(e),
            CommandError::EmptyStimulus => ServiceError::InvalidCommand(e.to_string()),
        }
    }
}

/// A debate plus its event log and background driver.
pub struct DebateHandle {
    pub debate: Arc<Debate>,
    pub events: Arc<EventLog>,
    speakers: BTreeMap<PersonaId, String>,
    driver: Mutex<Option<JoinHandle<()>>>,
}

impl DebateHandle {
    /// Applies a command. The first transition into `Running` spawns the
    /// task that drives turns; it keeps going through pauses and closes the
    /// event log when the debate stops.
    pub fn command(&self, command: Command) -> Result<Phase, ServiceError> {
        let mut driver = self.driver.lock().unwrap();
        let phase = self.debate.apply_command(command)?;
        if driver.is_none() {
            if phase == Phase::Running {
                let debate = self.debate.clone();
                let events = self.events.clone();
                *driver = Some(tokio::spawn(async move {
                    let outcome = debate.drive().await;
                    tracing::info!(debate = %debate.id(), ?outcome, "debate stopped");
                    events.close();
                }));
            } else if phase.is_terminal() {
                self.events.close();
            }
        }
        Ok(phase)
    }

    pub fn document(&self) -> TranscriptDocument {
        self.debate
            .with_state(|s| TranscriptDocument::from_state(s, self.speakers.clone()))
    }

    /// Waits for the driver task, if one was started.
    pub async fn join(&self) {
        let handle = self.driver.lock().unwrap().take();
        if let Some(h) = handle {
            let _ = h.await;
        }
    }
}

pub struct AppState {
    registry: RwLock<PersonaRegistry>,
    keyword_sets: Vec<KeywordSet>,
    provider: Arc<dyn Completer>,
    /// Each debate writes its files to `<output_dir>/<debate id>/`.
    output_dir: Option<PathBuf>,
    debates: RwLock<HashMap<String, Arc<DebateHandle>>>,
    idempotency: Mutex<HashMap<String, String>>,
}

impl AppState {
    pub fn new(
        registry: PersonaRegistry,
        keyword_sets: Vec<KeywordSet>,
        provider: Arc<dyn Completer>,
        output_dir: Option<PathBuf>,
    ) -> Self {
        Self {
            registry: RwLock::new(registry),
            keyword_sets,
            provider,
            output_dir,
            debates: RwLock::new(HashMap::new()),
            idempotency: Mutex::new(HashMap::new()),
        }
    }

    /// Returns the debate id and whether it was newly created.
    pub fn create_debate(
        &self,
        config: DebateConfig,
        idempotency_key: Option<&str>,
    ) -> Result<(String, bool), ServiceError> {
        let mut keys = self.idempotency.lock().unwrap();
        if let Some(id) = idempotency_key.and_then(|k| keys.get(k)) {
            return Ok((id.clone(), false));
        }

        let id = format!("debate-{}", uuid::Uuid::new_v4().simple());
        let events = Arc::new(EventLog::new(id.clone()));
        let registry = self.registry.read().unwrap();
        let mut speakers = BTreeMap::new();
        for p in &config.personas {
            let spec = registry
                .get(p)
                .ok_or_else(|| ServiceError::UnknownPersona(p.clone()))?;
            speakers.insert(p.clone(), spec.display_name.clone());
        }
        let mut builder = Debate::builder(config)
            .id(id.clone())
            .observer(events.clone());
        if let Some(dir) = &self.output_dir {
            builder = builder.observer(Arc::new(TranscriptWriter::new(
                dir.join(&id),
                speakers.clone(),
            )));
        }
        let debate = builder.build(&registry, self.provider.clone())?;

        let handle = Arc::new(DebateHandle {
            debate: Arc::new(debate),
            events,
            speakers,
            driver: Mutex::new(None),
        });
        self.debates.write().unwrap().insert(id.clone(), handle);
        if let Some(k) = idempotency_key {
            keys.insert(k.to_owned(), id.clone());
        }
        tracing::info!(debate = %id, "debate created");
        Ok((id, true))
    }

    pub fn debate(&self, id: &str) -> Result<Arc<DebateHandle>, ServiceError> {
        self.debates
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::DebateNotFound(id.to_owned()))
    }

    pub fn debate_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.debates.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn analysis(&self, id: &str, excerpt_limit: usize) -> Result<AnalysisView, ServiceError> {
        let doc = self.debate(id)?.document();
        Ok(analyze_document(&doc, &self.keyword_sets, excerpt_limit)?)
    }

    pub fn personas(&self) -> Vec<PersonaSpec> {
        self.registry.read().unwrap().iter().cloned().collect()
    }

    pub fn register_persona(
        &self,
        raw: &RawPersona,
        mode: ValidationMode,
    ) -> Result<ValidatedPersona, ServiceError> {
        let validated = validate_persona(raw, mode)?;
        let mut registry = self.registry.write().unwrap();
        if registry.contains(&validated.persona.id) {
            return Err(ServiceError::PersonaExists(validated.persona.id));
        }
        registry.insert(validated.persona.clone());
        Ok(validated)
    }
}
