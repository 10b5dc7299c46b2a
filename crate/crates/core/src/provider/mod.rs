//! Chat-completion backends.
//!
//! A [`Transport`] performs exactly one wire call. [`ChatClient`] wraps a
//! transport with retry, backoff and a concurrency limit and is what the rest
//! of the engine talks to through the [`Completer`] trait.

mod cache;
mod mock;
mod openai;
mod secret;

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::persona::{DecodingError, DecodingParams};

pub use cache::{cached_complete, CachedCompleter, ResponseCache};
pub use mock::{FaultPlan, MockTransport};
pub use openai::{OpenAiTransport, DEFAULT_BASE_URL};
pub use secret::{
    resolve_api_key, KeySource, MemorySecretStore, Secret, SecretError, SecretStore, VaultKvStore,
    OPENAI_API_KEY_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Who a request is for. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub speaker: String,
    pub turn_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
    #[serde(default)]
    pub tag: Option<RequestTag>,
    /// Overrides the client's retry limit for this request.
    #[serde(default)]
    pub retry_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("first message must have the system role")]
    FirstNotSystem,
    #[error(transparent)]
    Decoding(#[from] DecodingError),
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>, decoding: DecodingParams) -> Self {
        Self {
            messages,
            decoding,
            tag: None,
            retry_limit: None,
        }
    }

    pub fn with_tag(mut self, speaker: impl Into<String>, turn_index: u64) -> Self {
        self.tag = Some(RequestTag {
            speaker: speaker.into(),
            turn_index,
        });
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        match self.messages.first() {
            None => return Err(RequestError::NoMessages),
            Some(m) if m.role != Role::System => return Err(RequestError::FirstNotSystem),
            Some(_) => {}
        }
        self.decoding.validate()?;
        Ok(())
    }

    /// JSON body for `POST /v1/chat/completions`.
    pub fn wire_body(&self) -> Value {
        json!({
            "model": self.decoding.model_id,
            "messages": self.messages,
            "temperature": self.decoding.temperature,
            "top_p": self.decoding.top_p,
            "presence_penalty": self.decoding.presence_penalty,
            "frequency_penalty": self.decoding.frequency_penalty,
            "max_tokens": self.decoding.max_tokens,
        })
    }

    /// Compact JSON of [`Self::wire_body`] with object keys sorted.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        write_canonical(&self.wire_body(), &mut out);
        out.into_bytes()
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey(Sha256::digest(self.canonical_bytes()).into())
    }
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// SHA-256 digest of a request's canonical wire form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex digits.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    pub fn from_wire(reason: Option<&str>) -> Self {
        match reason {
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(with = "humantime_serde")]
    pub provider_latency: Duration,
    pub attempt_count: u32,
}

/// Outcome of a single successful wire call.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub content: String,
    pub finish_reason: FinishReason,
}

/// Failure of a single wire call.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttemptError {
    #[error("rate limited")]
    RateLimited,
    #[error("timed out")]
    Timeout,
    #[error("upstream returned status {status}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl AttemptError {
    pub fn is_transient(&self) -> bool {
        match self {
            AttemptError::RateLimited | AttemptError::Timeout | AttemptError::Network(_) => true,
            AttemptError::Status { status, .. } => *status >= 500,
            AttemptError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("rate limited")]
    RateLimited,
    #[error("timed out")]
    Timeout,
    #[error("bad response (status {status})")]
    BadResponse { status: u16 },
    #[error("network error: {0}")]
    Network(String),
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<ProviderError>,
    },
}

impl From<AttemptError> for ProviderError {
    fn from(e: AttemptError) -> Self {
        match e {
            AttemptError::RateLimited => ProviderError::RateLimited,
            AttemptError::Timeout => ProviderError::Timeout,
            AttemptError::Status { status, .. } => ProviderError::BadResponse { status },
            AttemptError::Network(m) => ProviderError::Network(m),
            AttemptError::Decode(m) => ProviderError::Decode(m),
        }
    }
}

#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, request: &CompletionRequest) -> Result<Reply, AttemptError>;
}

#[async_trait]
impl<T: Transport + ?Sized> Transport for Arc<T> {
    async fn send(&self, request: &CompletionRequest) -> Result<Reply, AttemptError> {
        (**self).send(request).await
    }
}

/// Anything that turns a request into a completion.
#[async_trait]
pub trait Completer: Send + Sync {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError>;
}

#[async_trait]
impl<C: Completer + ?Sized> Completer for Arc<C> {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request).await
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub limit: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            limit: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(limit: u32) -> Self {
        Self {
            limit,
            base_delay: Duration::ZERO,
            jitter: false,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let raw = self.base_delay.as_secs_f64() * self.factor.powi(retry as i32);
        let capped = raw.min(self.max_delay.as_secs_f64());
        if capped <= 0.0 {
            return Duration::ZERO;
        }
        let secs = if self.jitter {
            // equal jitter: half fixed, half random
            capped / 2.0 + rand::thread_rng().gen_range(0.0..=capped / 2.0)
        } else {
            capped
        };
        Duration::from_secs_f64(secs)
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Retrying client over a [`Transport`].
pub struct ChatClient<T> {
    transport: T,
    policy: RetryPolicy,
    permits: Arc<Semaphore>,
}

impl<T: Transport> ChatClient<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            policy: RetryPolicy::default(),
            permits: Arc::new(Semaphore::new(DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.permits = Arc::new(Semaphore::new(n.max(1)));
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }
}

#[async_trait]
impl<T: Transport> Completer for ChatClient<T> {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError> {
        request
            .validate()
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let limit = request.retry_limit.unwrap_or(self.policy.limit);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let started = Instant::now();
            let outcome = {
                let _permit = self
                    .permits
                    .acquire()
                    .await
                    .expect("semaphore is never closed");
                self.transport.send(request).await
            };
            match outcome {
                Ok(reply) => {
                    return Ok(CompletionResult {
                        content: reply.content,
                        finish_reason: reply.finish_reason,
                        provider_latency: started.elapsed(),
                        attempt_count: attempts,
                    })
                }
                Err(e) if !e.is_transient() => return Err(e.into()),
                Err(e) => {
                    tracing::debug!(attempt = attempts, error = %e, "transient provider failure");
                    if attempts > limit {
                        return Err(ProviderError::RetriesExhausted {
                            attempts,
                            last: Box::new(e.into()),
                        });
                    }
                    let wait = self.policy.delay(attempts - 1);
                    if !wait.is_zero() {
                        tokio::time::sleep(wait).await;
                    }
                }
            }
        }
    }
}
