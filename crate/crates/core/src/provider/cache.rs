use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;

use super::{CacheKey, Completer, CompletionRequest, CompletionResult, ProviderError, RequestTag};

/// In-memory response cache keyed by request digest and request tag.
///
/// The tag is part of the key because the mock backend's reply depends on it.
#[derive(Debug)]
pub struct ResponseCache {
    enabled: bool,
    entries: Mutex<HashMap<(CacheKey, Option<RequestTag>), CompletionResult>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for ResponseCache {
    fn default() -> Self {
        Self::new()
    }
}

impl ResponseCache {
    pub fn new() -> Self {
        Self {
            enabled: true,
            entries: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// A cache that stores nothing and always delegates.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(request: &CompletionRequest) -> (CacheKey, Option<RequestTag>) {
        (request.cache_key(), request.tag.clone())
    }

    fn get(&self, request: &CompletionRequest) -> Option<CompletionResult> {
        self.entries
            .lock()
            .unwrap()
            .get(&Self::key(request))
            .cloned()
    }

    fn put(&self, request: &CompletionRequest, result: CompletionResult) {
        self.entries
            .lock()
            .unwrap()
            .insert(Self::key(request), result);
    }
}

pub async fn cached_complete<C: Completer + ?Sized>(
    cache: &ResponseCache,
    upstream: &C,
    request: &CompletionRequest,
) -> Result<CompletionResult, ProviderError> {
    if !cache.enabled {
        return upstream.complete(request).await;
    }
    if let Some(hit) = cache.get(request) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(hit);
    }
    cache.misses.fetch_add(1, Ordering::Relaxed);
    let result = upstream.complete(request).await?;
    cache.put(request, result.clone());
    Ok(result)
}

/// [`Completer`] adapter that routes every call through a [`ResponseCache`].
pub struct CachedCompleter<C> {
    cache: ResponseCache,
    upstream: C,
}

impl<C: Completer> CachedCompleter<C> {
    pub fn new(upstream: C, cache: ResponseCache) -> Self {
        Self { cache, upstream }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn upstream(&self) -> &C {
        &self.upstream
    }
}

#[async_trait]
impl<C: Completer> Completer for CachedCompleter<C> {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError> {
        cached_complete(&self.cache, &self.upstream, request).await
    }
}
