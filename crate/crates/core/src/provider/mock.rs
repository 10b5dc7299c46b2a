use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{AttemptError, CompletionRequest, FinishReason, Reply, Transport};

/// Which attempts a [`MockTransport`] fails.
#[derive(Debug, Default)]
pub enum FaultPlan {
    #[default]
    Never,
    Always(AttemptError),
    /// One entry per attempt, `true` = fail with a rate limit; succeeds once exhausted.
    Scripted(VecDeque<bool>),
    /// Each attempt fails with probability `rate`, drawn from a seeded generator.
    Random {
        rate: f64,
        rng: Box<StdRng>,
    },
}

impl FaultPlan {
    pub fn scripted(schedule: impl IntoIterator<Item = bool>) -> Self {
        FaultPlan::Scripted(schedule.into_iter().collect())
    }

    pub fn random(seed: u64, rate: f64) -> Self {
        FaultPlan::Random {
            rate,
            rng: Box::new(StdRng::seed_from_u64(seed)),
        }
    }

    fn next(&mut self) -> Option<AttemptError> {
        match self {
            FaultPlan::Never => None,
            FaultPlan::Always(e) => Some(e.clone()),
            FaultPlan::Scripted(queue) => match queue.pop_front() {
                Some(true) => Some(AttemptError::RateLimited),
                _ => None,
            },
            FaultPlan::Random { rate, rng } => {
                if rng.gen::<f64>() < *rate {
                    Some(AttemptError::RateLimited)
                } else {
                    None
                }
            }
        }
    }
}

/// Deterministic offline backend.
///
/// Replies with `MOCK[<speaker>|t=<turn>|h=<first 8 hex of request digest>]`
/// and records every request it sees, failed attempts included.
#[derive(Debug, Default)]
pub struct MockTransport {
    calls: AtomicU64,
    requests: Mutex<Vec<CompletionRequest>>,
    faults: Mutex<FaultPlan>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(self, plan: FaultPlan) -> Self {
        *self.faults.lock().unwrap() = plan;
        self
    }

    pub fn set_faults(&self, plan: FaultPlan) {
        *self.faults.lock().unwrap() = plan;
    }

    /// Wire calls made so far, failed attempts included.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn reply_for(request: &CompletionRequest) -> String {
        let (speaker, turn) = request
            .tag
            .as_ref()
            .map(|t| (t.speaker.as_str(), t.turn_index))
            .unwrap_or(("unknown", 0));
        format!("MOCK[{speaker}|t={turn}|h={}]", request.cache_key().short())
    }
}

#[async_trait]
impl Transport for MockTransport {
    async fn send(&self, request: &CompletionRequest) -> Result<Reply, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        if let Some(e) = self.faults.lock().unwrap().next() {
            return Err(e);
        }
        Ok(Reply {
            content: Self::reply_for(request),
            finish_reason: FinishReason::Stop,
        })
    }
}
