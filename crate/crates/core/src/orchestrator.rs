//! The debate state machine.
//!
//! A debate alternates two personas: even turns belong to the first
//! persona, odd turns to the second. Turn 0 is the opening question itself,
//! attributed to the opening speaker; every later turn is one provider call.
//! Human commands (start, pause, resume, inject, end) can arrive from any
//! thread and take effect at turn boundaries.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::clock::{Clock, SystemClock};
use crate::persona::{
    compile_system_prompt, decoding_params_for, BusinessContext, CompileError, CompiledPrompt,
    DecodingParams, PersonaId, PersonaRegistry, PersonaSpec,
};
use crate::provider::{
    ChatMessage, Completer, CompletionRequest, CompletionResult, FinishReason, ProviderError,
};

pub const DEFAULT_TOTAL_TURNS: u32 = 50;
pub const DEFAULT_INTER_TURN_DELAY: Duration = Duration::from_secs(15);
pub const DEFAULT_HISTORY_WINDOW: usize = 8;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;

/// Label that introduces a human interjection inside a prompt.
pub const STIMULUS_LABEL: &str = "[Human orchestrator interjection]";

fn default_total_turns() -> u32 {
    DEFAULT_TOTAL_TURNS
}
fn default_delay() -> Duration {
    DEFAULT_INTER_TURN_DELAY
}
fn default_history_window() -> usize {
    DEFAULT_HISTORY_WINDOW
}
fn default_retry_limit() -> u32 {
    DEFAULT_RETRY_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub personas: [PersonaId; 2],
    pub business_context: String,
    pub opening_question: String,
    pub opening_speaker: PersonaId,
    #[serde(default = "default_total_turns")]
    pub total_turns: u32,
    #[serde(default = "default_delay", with = "humantime_serde")]
    pub inter_turn_delay: Duration,
    #[serde(default = "default_history_window")]
    pub history_window: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default)]
    pub decoding: DecodingParams,
}

impl DebateConfig {
    pub fn new(
        first: PersonaId,
        second: PersonaId,
        business_context: impl Into<String>,
        opening_question: impl Into<String>,
    ) -> Self {
        Self {
            opening_speaker: first.clone(),
            personas: [first, second],
            business_context: business_context.into(),
            opening_question: opening_question.into(),
            total_turns: DEFAULT_TOTAL_TURNS,
            inter_turn_delay: DEFAULT_INTER_TURN_DELAY,
            history_window: DEFAULT_HISTORY_WINDOW,
            retry_limit: DEFAULT_RETRY_LIMIT,
            decoding: DecodingParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let invalid = |m: &str| Err(OrchestratorError::InvalidConfig(m.to_owned()));
        if self.personas[0] == self.personas[1] {
            return invalid("the two personas must differ");
        }
        if !self.personas.contains(&self.opening_speaker) {
            return invalid("opening_speaker must be one of the two personas");
        }
        if self.total_turns == 0 {
            return invalid("total_turns must be at least 1");
        }
        if self.opening_question.trim().is_empty() {
            return invalid("opening_question is empty");
        }
        if self.business_context.trim().is_empty() {
            return invalid("business_context is empty");
        }
        self.decoding
            .validate()
            .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))
    }

    /// Same config with the opening speaker in the first slot.
    fn normalized(mut self) -> Self {
        if self.personas[1] == self.opening_speaker {
            self.personas.swap(0, 1);
        }
        self
    }
}

/// Speaker of turn `index`: even turns go to the first persona.
pub fn speaker_for(index: u64, config: &DebateConfig) -> &PersonaId {
    &config.personas[(index % 2) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Created,
    Running,
    Paused,
    Ended,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Ended | Phase::Failed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Created => "created",
            Phase::Running => "running",
            Phase::Paused => "paused",
            Phase::Ended => "ended",
            Phase::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Start,
    Pause,
    Resume,
    Inject { text: String },
    End,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Start => "start",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Inject { .. } => "inject",
            Command::End => "end",
        }
    }
}

/// Phase after applying `command` in `phase`, or `None` when illegal.
pub fn transition(phase: Phase, command: &Command) -> Option<Phase> {
    use Phase::*;
    match (phase, command) {
        (Created, Command::Start) => Some(Running),
        (Running, Command::Pause) => Some(Paused),
        (Paused, Command::Resume) => Some(Running),
        (Created | Running | Paused, Command::End) => Some(Ended),
        (p, Command::Inject { .. }) if !p.is_terminal() => Some(p),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u64,
    pub speaker: PersonaId,
    pub content: String,
    pub finish_reason: FinishReason,
    pub timestamp: DateTime<Utc>,
    /// Provider attempts; 0 for the opening question, which is not generated.
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedStimulus {
    pub text: String,
    pub injected_at_turn: u64,
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogKind {
    Command { command: Command, accepted: bool },
    PhaseChanged { from: Phase, to: Phase },
    StimulusConsumed { text: String, turn_index: u64 },
    Failure { message: String },
}

/// One entry of the debate's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Completed turns at the moment of the entry.
    pub at_turn: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: LogKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateState {
    pub id: String,
    pub config: DebateConfig,
    pub phase: Phase,
    pub turns: Vec<Turn>,
    pub pending_stimuli: VecDeque<InjectedStimulus>,
    pub next_turn_index: u64,
    pub events: Vec<LogEntry>,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub ended_at: Option<DateTime<Utc>>,
}

/// Hooks invoked while the debate's state lock is held, so every callback
/// sees the state exactly as it was when the change happened.
pub trait DebateObserver: Send + Sync {
    fn phase_changed(&self, _state: &DebateState, _from: Phase, _to: Phase) {}
    fn turn_completed(&self, _state: &DebateState, _turn: &Turn) {}
    fn stimulus_injected(&self, _state: &DebateState, _stimulus: &InjectedStimulus) {}
    fn failed(&self, _state: &DebateState, _error: &ProviderError) {}
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("unknown persona {0}")]
    UnknownPersona(PersonaId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("cannot {command} while {phase}")]
    IllegalTransition { phase: Phase, command: &'static str },
    #[error("stimulus text is empty")]
    EmptyStimulus,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TurnError {
    #[error("debate is {0}, not running")]
    NotRunning(Phase),
    #[error("turn budget exhausted")]
    BudgetExhausted,
    #[error("a turn is already in flight")]
    TurnInProgress,
    #[error("provider failed: {0}")]
    Provider(#[from] ProviderError),
}

/// Why [`Debate::run`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Budget reached or an end command arrived.
    Ended,
    /// Paused, never started, or stopped short of the budget by `until`.
    Suspended(Phase),
    Failed,
}

struct Participant {
    spec: PersonaSpec,
    prompt: CompiledPrompt,
    decoding: DecodingParams,
}

enum Step {
    Seeded(Turn, Duration),
    Call(u64, CompletionRequest),
}

struct Inner {
    state: DebateState,
    in_flight: bool,
}

/// A live debate. Cheap to share behind an [`Arc`].
pub struct Debate {
    inner: Mutex<Inner>,
    participants: [Participant; 2],
    provider: Arc<dyn Completer>,
    clock: Arc<dyn Clock>,
    observers: Vec<Arc<dyn DebateObserver>>,
    phase_tx: watch::Sender<Phase>,
}

pub struct DebateBuilder {
    config: DebateConfig,
    id: Option<String>,
    clock: Arc<dyn Clock>,
    observers: Vec<Arc<dyn DebateObserver>>,
}

impl DebateBuilder {
    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn observer(mut self, observer: Arc<dyn DebateObserver>) -> Self {
        self.observers.push(observer);
        self
    }

    /// Resolves both personas, compiles their prompts and stages the opening question.
    pub fn build(
        self,
        registry: &PersonaRegistry,
        provider: Arc<dyn Completer>,
    ) -> Result<Debate, OrchestratorError> {
        self.config.validate()?;
        let config = self.config.normalized();
        let context = BusinessContext::new(config.business_context.clone());
        let mut participants = Vec::with_capacity(2);
        for id in &config.personas {
            let spec = registry
                .get(id)
                .ok_or_else(|| OrchestratorError::UnknownPersona(id.clone()))?
                .clone();
            let prompt = compile_system_prompt(&spec, &context)?;
            let decoding = decoding_params_for(&config.decoding, &spec);
            participants.push(Participant {
                spec,
                prompt,
                decoding,
            });
        }
        let second = participants.pop().expect("two participants");
        let first = participants.pop().expect("two participants");

        let state = DebateState {
            id: self
                .id
                .unwrap_or_else(|| new_debate_id(self.clock.as_ref())),
            config,
            phase: Phase::Created,
            turns: Vec::new(),
            pending_stimuli: VecDeque::new(),
            next_turn_index: 0,
            events: Vec::new(),
            created_at: self.clock.now(),
            started_at: None,
            ended_at: None,
        };
        let (phase_tx, _) = watch::channel(Phase::Created);
        Ok(Debate {
            inner: Mutex::new(Inner {
                state,
                in_flight: false,
            }),
            participants: [first, second],
            provider,
            clock: self.clock,
            observers: self.observers,
            phase_tx,
        })
    }
}

fn new_debate_id(clock: &dyn Clock) -> String {
    use rand::Rng;
    format!(
        "debate-{}-{:08x}",
        clock.now().format("%Y%m%dT%H%M%SZ"),
        rand::thread_rng().gen::<u32>()
    )
}

/// Builds a debate in phase `Created`.
pub fn new_debate(
    config: DebateConfig,
    registry: &PersonaRegistry,
    provider: Arc<dyn Completer>,
) -> Result<Debate, OrchestratorError> {
    Debate::builder(config).build(registry, provider)
}

impl Debate {
    pub fn builder(config: DebateConfig) -> DebateBuilder {
        DebateBuilder {
            config,
            id: None,
            clock: Arc::new(SystemClock),
            observers: Vec::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn id(&self) -> String {
        self.lock().state.id.clone()
    }

    pub fn phase(&self) -> Phase {
        self.lock().state.phase
    }

    pub fn snapshot(&self) -> DebateState {
        self.lock().state.clone()
    }

    /// Runs `f` against the current state without cloning it.
    pub fn with_state<R>(&self, f: impl FnOnce(&DebateState) -> R) -> R {
        f(&self.lock().state)
    }

    pub fn persona(&self, id: &PersonaId) -> Option<&PersonaSpec> {
        self.participants
            .iter()
            .map(|p| &p.spec)
            .find(|spec| &spec.id == id)
    }

    pub fn system_prompt(&self, id: &PersonaId) -> Option<&CompiledPrompt> {
        self.participants
            .iter()
            .find(|p| &p.spec.id == id)
            .map(|p| &p.prompt)
    }

    /// Receiver that observes every phase change.
    pub fn watch_phase(&self) -> watch::Receiver<Phase> {
        self.phase_tx.subscribe()
    }

    fn set_phase(&self, inner: &mut Inner, to: Phase) {
        let from = inner.state.phase;
        if from == to {
            return;
        }
        let now = self.clock.now();
        inner.state.phase = to;
        if to == Phase::Running && inner.state.started_at.is_none() {
            inner.state.started_at = Some(now);
        }
        if to.is_terminal() {
            inner.state.ended_at = Some(now);
        }
        let at_turn = inner.state.next_turn_index;
        tracing::info!(debate = %inner.state.id, %from, %to, "phase changed");
        inner.state.events.push(LogEntry {
            at_turn,
            timestamp: now,
            kind: LogKind::PhaseChanged { from, to },
        });
        for o in &self.observers {
            o.phase_changed(&inner.state, from, to);
        }
        self.phase_tx.send_replace(to);
    }

    /// Applies a human command. Every command, accepted or not, is logged.
    pub fn apply_command(&self, command: Command) -> Result<Phase, CommandError> {
        let mut inner = self.lock();
        let phase = inner.state.phase;
        let now = self.clock.now();
        let at_turn = inner.state.next_turn_index;

        let verdict = match (&command, transition(phase, &command)) {
            (_, None) => Err(CommandError::IllegalTransition {
                phase,
                command: command.name(),
            }),
            (Command::Inject { text }, Some(_)) if text.trim().is_empty() => {
                Err(CommandError::EmptyStimulus)
            }
            (_, Some(next)) => Ok(next),
        };
        inner.state.events.push(LogEntry {
            at_turn,
            timestamp: now,
            kind: LogKind::Command {
                command: command.clone(),
                accepted: verdict.is_ok(),
            },
        });
        let next = verdict?;

        if let Command::Inject { text } = command {
            let stimulus = InjectedStimulus {
                text,
                injected_at_turn: at_turn,
                author: "human".to_owned(),
            };
            inner.state.pending_stimuli.push_back(stimulus.clone());
            for o in &self.observers {
                o.stimulus_injected(&inner.state, &stimulus);
            }
        }
        self.set_phase(&mut inner, next);
        Ok(next)
    }

    fn build_request(&self, state: &mut DebateState, index: u64) -> CompletionRequest {
        let slot = (index % 2) as usize;
        let me = &self.participants[slot];
        let other = &self.participants[1 - slot];

        let mut messages = vec![ChatMessage::system(me.prompt.system_text.clone())];
        let window_start = state
            .turns
            .len()
            .saturating_sub(state.config.history_window)
            .max(1);
        let history = state
            .turns
            .iter()
            .take(1)
            .chain(&state.turns[window_start..]);
        for turn in history {
            if turn.speaker == me.spec.id {
                messages.push(ChatMessage::assistant(turn.content.clone()));
            } else {
                messages.push(ChatMessage::user(format!(
                    "{}: {}",
                    other.spec.display_name, turn.content
                )));
            }
        }

        let now = self.clock.now();
        while let Some(stimulus) = state.pending_stimuli.pop_front() {
            messages.push(ChatMessage::user(format!(
                "{STIMULUS_LABEL} {}",
                stimulus.text
            )));
            state.events.push(LogEntry {
                at_turn: index,
                timestamp: now,
                kind: LogKind::StimulusConsumed {
                    text: stimulus.text,
                    turn_index: index,
                },
            });
        }

        let mut request = CompletionRequest::new(messages, me.decoding.clone())
            .with_tag(me.spec.display_name.clone(), index);
        request.retry_limit = Some(state.config.retry_limit);
        request
    }

    fn commit(&self, inner: &mut Inner, turn: Turn) {
        tracing::debug!(
            debate = %inner.state.id,
            index = turn.index,
            speaker = %turn.speaker,
            attempts = turn.attempt_count,
            "turn completed"
        );
        inner.state.turns.push(turn);
        inner.state.next_turn_index += 1;
        let turn = inner.state.turns.last().expect("just pushed");
        for o in &self.observers {
            o.turn_completed(&inner.state, turn);
        }
        if inner.state.next_turn_index >= u64::from(inner.state.config.total_turns)
            && !inner.state.phase.is_terminal()
        {
            self.set_phase(inner, Phase::Ended);
        }
    }

    fn begin_turn(&self) -> Result<Step, TurnError> {
        let mut inner = self.lock();
        if inner.in_flight {
            return Err(TurnError::TurnInProgress);
        }
        if inner.state.phase != Phase::Running {
            return Err(TurnError::NotRunning(inner.state.phase));
        }
        let index = inner.state.next_turn_index;
        if index >= u64::from(inner.state.config.total_turns) {
            return Err(TurnError::BudgetExhausted);
        }
        if index == 0 {
            let turn = Turn {
                index: 0,
                speaker: inner.state.config.opening_speaker.clone(),
                content: inner.state.config.opening_question.clone(),
                finish_reason: FinishReason::Stop,
                timestamp: self.clock.now(),
                attempt_count: 0,
            };
            self.commit(&mut inner, turn.clone());
            return Ok(Step::Seeded(turn, inner.state.config.inter_turn_delay));
        }
        let request = self.build_request(&mut inner.state, index);
        inner.in_flight = true;
        Ok(Step::Call(index, request))
    }

    fn finish_turn(
        &self,
        index: u64,
        outcome: Result<CompletionResult, ProviderError>,
    ) -> Result<(Turn, Duration), TurnError> {
        let mut inner = self.lock();
        inner.in_flight = false;
        match outcome {
            Ok(result) => {
                let turn = Turn {
                    index,
                    speaker: speaker_for(index, &inner.state.config).clone(),
                    content: result.content,
                    finish_reason: result.finish_reason,
                    timestamp: self.clock.now(),
                    attempt_count: result.attempt_count,
                };
                self.commit(&mut inner, turn.clone());
                Ok((turn, inner.state.config.inter_turn_delay))
            }
            Err(error) => {
                let now = self.clock.now();
                let at_turn = inner.state.next_turn_index;
                inner.state.events.push(LogEntry {
                    at_turn,
                    timestamp: now,
                    kind: LogKind::Failure {
                        message: error.to_string(),
                    },
                });
                for o in &self.observers {
                    o.failed(&inner.state, &error);
                }
                self.set_phase(&mut inner, Phase::Failed);
                Err(TurnError::Provider(error))
            }
        }
    }

    /// Produces one turn and, if the debate is still running, waits out the
    /// inter-turn delay before returning.
    pub async fn next_turn(&self) -> Result<Turn, TurnError> {
        let (turn, delay) = match self.begin_turn()? {
            Step::Seeded(turn, delay) => (turn, delay),
            Step::Call(index, request) => {
                let outcome = self.provider.complete(&request).await;
                self.finish_turn(index, outcome)?
            }
        };
        self.pace(delay).await;
        Ok(turn)
    }

    fn end_if_running(&self) {
        let mut inner = self.lock();
        if inner.state.phase == Phase::Running {
            self.set_phase(&mut inner, Phase::Ended);
        }
    }

    /// Waits `delay` unless the debate leaves `Running` first.
    async fn pace(&self, delay: Duration) {
        if delay.is_zero() {
            return;
        }
        let mut rx = self.phase_tx.subscribe();
        if *rx.borrow_and_update() != Phase::Running {
            return;
        }
        let _ = tokio::time::timeout(delay, rx.wait_for(|p| *p != Phase::Running)).await;
    }

    /// Drives turns until `until` turns exist in total, the config's budget
    /// is spent, or the phase leaves `Running`. Reaching the budget ends the
    /// debate; stopping at `until` leaves it running. A debate still in
    /// `Created` is started first.
    pub async fn run(&self, until: u64) -> RunOutcome {
        self.run_with_hook(until, |_| {}).await
    }

    /// Like [`Self::run`], calling `hook` at every turn boundary (including
    /// before the first turn) so scripted commands can be applied there.
    pub async fn run_with_hook(&self, until: u64, mut hook: impl FnMut(&Debate)) -> RunOutcome {
        if self.phase() == Phase::Created {
            let _ = self.apply_command(Command::Start);
        }
        loop {
            hook(self);
            let (phase, spent, reached) = {
                let inner = self.lock();
                let next = inner.state.next_turn_index;
                (
                    inner.state.phase,
                    next >= u64::from(inner.state.config.total_turns),
                    next >= until,
                )
            };
            match phase {
                Phase::Running if spent => self.end_if_running(),
                Phase::Running if reached => return RunOutcome::Suspended(Phase::Running),
                Phase::Running => match self.next_turn().await {
                    Ok(_) | Err(TurnError::NotRunning(_)) | Err(TurnError::BudgetExhausted) => {}
                    Err(TurnError::TurnInProgress) => tokio::task::yield_now().await,
                    Err(TurnError::Provider(_)) => return RunOutcome::Failed,
                },
                Phase::Created | Phase::Paused => return RunOutcome::Suspended(phase),
                Phase::Ended => return RunOutcome::Ended,
                Phase::Failed => return RunOutcome::Failed,
            }
        }
    }

    /// Runs to completion, sleeping through pauses until a resume or end
    /// command arrives from elsewhere.
    pub async fn drive(&self) -> RunOutcome {
        let mut rx = self.watch_phase();
        loop {
            let until = u64::from(self.with_state(|s| s.config.total_turns));
            match self.run(until).await {
                RunOutcome::Suspended(_) => {
                    if rx
                        .wait_for(|p| !matches!(p, Phase::Created | Phase::Paused))
                        .await
                        .is_err()
                    {
                        return RunOutcome::Suspended(self.phase());
                    }
                }
                other => return other,
            }
        }
    }
}
