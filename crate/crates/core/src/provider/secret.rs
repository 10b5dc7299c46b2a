//! API key resolution: environment first, then a managed secret store.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;
use thiserror::Error;

pub const OPENAI_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// A credential whose value is never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecretError {
    #[error("secret {0:?} not found in environment or secret store")]
    NotFound(String),
    #[error("secret store unreachable: {0}")]
    VaultUnreachable(String),
}

#[async_trait]
pub trait SecretStore: Send + Sync {
    /// `Ok(None)` when the store is reachable but has no such secret.
    async fn fetch(&self, name: &str) -> Result<Option<Secret>, SecretError>;
}

/// Where to look for the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySource {
    pub env_var: String,
    pub store_name: String,
}

impl Default for KeySource {
    fn default() -> Self {
        Self {
            env_var: OPENAI_API_KEY_ENV.to_owned(),
            store_name: "openai-api-key".to_owned(),
        }
    }
}

/// Returns the environment value when set and non-empty; otherwise asks the store.
pub async fn resolve_api_key<E>(
    source: &KeySource,
    env_lookup: E,
    store: Option<&dyn SecretStore>,
) -> Result<Secret, SecretError>
where
    E: Fn(&str) -> Option<String>,
{
    if let Some(value) = env_lookup(&source.env_var).filter(|v| !v.trim().is_empty()) {
        tracing::debug!(var = %source.env_var, "api key taken from environment");
        return Ok(Secret(value));
    }
    let Some(store) = store else {
        return Err(SecretError::NotFound(source.env_var.clone()));
    };
    match store.fetch(&source.store_name).await? {
        Some(secret) => {
            tracing::debug!(name = %source.store_name, "api key taken from secret store");
            Ok(secret)
        }
        None => Err(SecretError::NotFound(source.store_name.clone())),
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySecretStore {
    secrets: HashMap<String, String>,
    unreachable: bool,
}

impl MemorySecretStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: &str) -> Self {
        self.secrets.insert(name.to_owned(), value.to_owned());
        self
    }

    pub fn unreachable() -> Self {
        Self {
            unreachable: true,
            ..Self::default()
        }
    }
}

#[async_trait]
impl SecretStore for MemorySecretStore {
    async fn fetch(&self, name: &str) -> Result<Option<Secret>, SecretError> {
        if self.unreachable {
            return Err(SecretError::VaultUnreachable("store offline".into()));
        }
        Ok(self.secrets.get(name).cloned().map(Secret))
    }
}

/// HashiCorp Vault KV v2 store: reads `GET {addr}/v1/{mount}/data/{name}`
/// and returns `data.data.value`.
pub struct VaultKvStore {
    addr: String,
    mount: String,
    token: Secret,
    http: reqwest::Client,
}

impl VaultKvStore {
    pub fn new(addr: &str, mount: &str, token: Secret) -> Result<Self, SecretError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| SecretError::VaultUnreachable(e.to_string()))?;
        Ok(Self {
            addr: addr.trim_end_matches('/').to_owned(),
            mount: mount.trim_matches('/').to_owned(),
            token,
            http,
        })
    }
}

#[async_trait]
impl SecretStore for VaultKvStore {
    async fn fetch(&self, name: &str) -> Result<Option<Secret>, SecretError> {
        let url = format!("{}/v1/{}/data/{}", self.addr, self.mount, name);
        let response = self
            .http
            .get(&url)
            .header("X-Vault-Token", self.token.expose())
            .send()
            .await
            .map_err(|e| SecretError::VaultUnreachable(e.without_url().to_string()))?;
        match response.status().as_u16() {
            404 => return Ok(None),
            200..=299 => {}
            other => return Err(SecretError::VaultUnreachable(format!("status {other}"))),
        }
        let body: Value = response
            .json()
            .await
            .map_err(|e| SecretError::VaultUnreachable(e.without_url().to_string()))?;
        Ok(body
            .pointer("/data/data/value")
            .and_then(Value::as_str)
            .map(|v| Secret(v.to_owned())))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    struct CountingStore {
        inner: MemorySecretStore,
        calls: AtomicUsize,
    }

    #[async_trait]
    impl SecretStore for CountingStore {
        async fn fetch(&self, name: &str) -> Result<Option<Secret>, SecretError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.fetch(name).await
        }
    }

    fn env(value: Option<&'static str>) -> impl Fn(&str) -> Option<String> {
        move |name| {
            assert_eq!(name, "OPENAI_API_KEY");
            value.map(str::to_owned)
        }
    }

    #[tokio::test]
    async fn environment_wins_and_store_untouched() {
        let store = CountingStore {
            inner: MemorySecretStore::new().with("openai-api-key", "sk-vault"),
            calls: AtomicUsize::new(0),
        };
        let key = resolve_api_key(&KeySource::default(), env(Some("sk-test")), Some(&store))
            .await
            .unwrap();
        assert_eq!(key.expose(), "sk-test");
        assert_eq!(store.calls.load(Ordering::SeqCst), 0);
    }

    #[tokio::test]
    async fn falls_back_to_store() {
        let store = MemorySecretStore::new().with("openai-api-key", "sk-vault");
        let key = resolve_api_key(&KeySource::default(), env(None), Some(&store))
            .await
            .unwrap();
        assert_eq!(key.expose(), "sk-vault");
        let key = resolve_api_key(&KeySource::default(), env(Some("  ")), Some(&store))
            .await
            .unwrap();
        assert_eq!(key.expose(), "sk-vault");
    }

    #[tokio::test]
    async fn exhausted_sources() {
        let store = MemorySecretStore::new();
        assert!(matches!(
            resolve_api_key(&KeySource::default(), env(None), Some(&store)).await,
            Err(SecretError::NotFound(_))
        ));
        assert!(matches!(
            resolve_api_key(&KeySource::default(), env(None), None).await,
            Err(SecretError::NotFound(_))
        ));
        assert!(matches!(
            resolve_api_key(
                &KeySource::default(),
                env(None),
                Some(&MemorySecretStore::unreachable())
            )
            .await,
            Err(SecretError::VaultUnreachable(_))
        ));
    }

    #[test]
    fn secret_is_redacted() {
        let s = Secret::new("sk-live-123");
        assert_eq!(format!("{s:?} {s}"), "Secret(***) ***");
    }
}
