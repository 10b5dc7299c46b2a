//! Builds the completion backend from flags and environment.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use colloquy_core::provider::{
    resolve_api_key, ChatClient, Completer, KeySource, MockTransport, OpenAiTransport, Secret,
    SecretStore, VaultKvStore, DEFAULT_BASE_URL, DEFAULT_MAX_IN_FLIGHT,
};

pub const VAULT_ADDR_ENV: &str = "VAULT_ADDR";
pub const VAULT_TOKEN_ENV: &str = "VAULT_TOKEN";
pub const VAULT_MOUNT_ENV: &str = "COLLOQUY_VAULT_MOUNT";

#[derive(Debug, Clone)]
pub struct ProviderOptions {
    pub mock: bool,
    pub base_url: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for ProviderOptions {
    fn default() -> Self {
        Self {
            mock: false,
            base_url: None,
            timeout: Duration::from_secs(60),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Mock backend, or the OpenAI-compatible one with the key taken from
/// `OPENAI_API_KEY` or, failing that, Vault when `VAULT_ADDR` and
/// `VAULT_TOKEN` are set.
pub async fn build_provider(
    options: &ProviderOptions,
    env: impl Fn(&str) -> Option<String>,
) -> anyhow::Result<Arc<dyn Completer>> {
    if options.mock {
        let client =
            ChatClient::new(MockTransport::new()).with_max_in_flight(options.max_in_flight);
        return Ok(Arc::new(client));
    }
    let vault = match (env(VAULT_ADDR_ENV), env(VAULT_TOKEN_ENV)) {
        (Some(addr), Some(token)) => {
            let mount = env(VAULT_MOUNT_ENV).unwrap_or_else(|| "secret".into());
            Some(VaultKvStore::new(&addr, &mount, Secret::new(token))?)
        }
        _ => None,
    };
    let key = resolve_api_key(
        &KeySource::default(),
        &env,
        vault.as_ref().map(|v| v as &dyn SecretStore),
    )
    .await
    .context("no API key: set OPENAI_API_KEY, configure Vault, or pass --mock")?;
    let base = options.base_url.as_deref().unwrap_or(DEFAULT_BASE_URL);
    let transport = OpenAiTransport::new(base, key, options.timeout)?;
    Ok(Arc::new(
        ChatClient::new(transport).with_max_in_flight(options.max_in_flight),
    ))
}
