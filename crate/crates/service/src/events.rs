//! Per-debate event log with dense sequence numbers and live fan-out.

use std::sync::{Arc, Mutex};

use colloquy_core::orchestrator::{DebateObserver, DebateState, InjectedStimulus, Phase};
use colloquy_core::provider::ProviderError;
use colloquy_core::Turn;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    TurnCompleted(Turn),
    PhaseChanged { from: Phase, to: Phase },
    StimulusInjected(InjectedStimulus),
    Error { message: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TurnCompleted(_) => "turn_completed",
            EventKind::PhaseChanged { .. } => "phase_changed",
            EventKind::StimulusInjected(_) => "stimulus_injected",
            EventKind::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateEvent {
    pub debate_id: String,
    pub sequence: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Default)]
struct Log {
    events: Vec<DebateEvent>,
    closed: bool,
}

/// Observer that records every debate event. Sequence numbers are assigned
/// under the debate's own lock, so they follow the order of state changes.
pub struct EventLog {
    debate_id: String,
    log: Mutex<Log>,
    /// Number of events recorded so far, plus a final bump on close.
    notify: watch::Sender<(usize, bool)>,
}

impl EventLog {
    pub fn new(debate_id: impl Into<String>) -> Self {
        Self {
            debate_id: debate_id.into(),
            log: Mutex::new(Log::default()),
            notify: watch::channel((0, false)).0,
        }
    }

    fn push(&self, kind: EventKind) {
        let mut log = self.log.lock().unwrap();
        let sequence = log.events.len() as u64;
        log.events.push(DebateEvent {
            debate_id: self.debate_id.clone(),
            sequence,
            kind,
        });
        self.notify.send_replace((log.events.len(), log.closed));
    }

    /// Marks the log complete; subscribers finish once they have drained it.
    pub fn close(&self) {
        let mut log = self.log.lock().unwrap();
        log.closed = true;
        self.notify.send_replace((log.events.len(), true));
    }

    pub fn is_closed(&self) -> bool {
        self.log.lock().unwrap().closed
    }

    pub fn len(&self) -> usize {
        self.log.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events with `sequence >= from`.
    pub fn since(&self, from: u64) -> Vec<DebateEvent> {
        let log = self.log.lock().unwrap();
        log.events.iter().skip(from as usize).cloned().collect()
    }

    /// Replays events from `from`, then follows live ones until the log closes.
    pub fn subscribe(
        self: &Arc<Self>,
        from: u64,
    ) -> impl Stream<Item = DebateEvent> + Send + 'static {
        let rx = self.notify.subscribe();
        futures::stream::unfold((self.clone(), from, rx), |(log, next, mut rx)| async move {
            loop {
                let (event, closed) = {
                    let inner = log.log.lock().unwrap();
                    (inner.events.get(next as usize).cloned(), inner.closed)
                };
                if let Some(event) = event {
                    return Some((event, (log, next + 1, rx)));
                }
                if closed || rx.changed().await.is_err() {
                    return None;
                }
            }
        })
    }
}

impl DebateObserver for EventLog {
    fn phase_changed(&self, _state: &DebateState, from: Phase, to: Phase) {
        self.push(EventKind::PhaseChanged { from, to });
    }

    fn turn_completed(&self, _state: &DebateState, turn: &Turn) {
        self.push(EventKind::TurnCompleted(turn.clone()));
    }

    fn stimulus_injected(&self, _state: &DebateState, stimulus: &InjectedStimulus) {
        self.push(EventKind::StimulusInjected(stimulus.clone()));
    }

    fn failed(&self, _state: &DebateState, error: &ProviderError) {
        self.push(EventKind::Error {
            message: error.to_string(),
        });
    }
}
