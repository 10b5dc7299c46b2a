//! OpenAI-compatible `/v1/chat/completions` transport.

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::{AttemptError, CompletionRequest, FinishReason, Reply, Secret, Transport};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

#[derive(Debug)]
pub struct OpenAiTransport {
    endpoint: String,
    api_key: Secret,
    http: reqwest::Client,
}

impl OpenAiTransport {
    /// `base_url` may or may not end in `/v1`.
    pub fn new(base_url: &str, api_key: Secret, timeout: Duration) -> Result<Self, AttemptError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AttemptError::Network(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint_for(base_url),
            api_key,
            http,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn endpoint_for(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[async_trait]
impl Transport for OpenAiTransport {
    async fn send(&self, request: &CompletionRequest) -> Result<Reply, AttemptError> {
        tracing::debug!(
            endpoint = %self.endpoint,
            digest = %request.cache_key().short(),
            "sending completion request"
        );
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(self.api_key.expose())
            .json(&request.wire_body())
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    AttemptError::Timeout
                } else {
                    AttemptError::Network(e.without_url().to_string())
                }
            })?;

        let status = response.status().as_u16();
        if status == 429 {
            return Err(AttemptError::RateLimited);
        }
        if status == 408 {
            return Err(AttemptError::Timeout);
        }
        if !(200..300).contains(&status) {
            let body = response.text().await.unwrap_or_default();
            return Err(AttemptError::Status { status, body });
        }

        let parsed: WireResponse = response.json().await.map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Decode(e.without_url().to_string())
            }
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Decode("response has no choices".into()))?;
        Ok(Reply {
            content: choice.message.content.unwrap_or_default(),
            finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
        })
    }
}
