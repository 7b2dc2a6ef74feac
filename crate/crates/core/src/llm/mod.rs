//! Chat-completions access: an HTTP provider with retries, a scripted mock,
//! and an append-only response cache keyed by the canonical request.

mod cache;
mod http;
mod mock;

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::ChatMessage;

pub use self::cache::{CacheEntry, ResponseCache};
pub use self::http::{post_json_with_retry, HttpProvider};
pub use self::mock::{fingerprint, MockProvider, MockScript};

pub const API_KEY_ENV: &str = "SKILLHARNESS_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, message: String },
    #[error("gave up after {attempts} attempts: {last}")]
    TimeoutExhausted { attempts: usize, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache: {0}")]
    CacheIo(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: usize,
    /// Sleep before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, backoff_ms: vec![1000, 2000, 4000, 8000] }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: usize) -> Self {
        RetryPolicy { max_attempts, backoff_ms: vec![0] }
    }

    pub fn delay(&self, retry: usize) -> std::time::Duration {
        let ms = self.backoff_ms.get(retry).or_else(|| self.backoff_ms.last()).copied().unwrap_or(0);
        std::time::Duration::from_millis(ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            timeout_secs: 60,
            max_parallel: 4,
            retry: RetryPolicy::default(),
            api_key_env: API_KEY_ENV.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".to_string()));
        }
        if !self.temperature.is_finite() {
            return Err(LlmError::InvalidRequest("temperature must be finite".to_string()));
        }
        Ok(())
    }

    /// Compact JSON with object keys sorted; array order is preserved.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("request is plain data");
        let mut out = String::new();
        write_canonical(&value, &mut out);
        out
    }

    /// SHA-256 of [`Self::canonical_json`], as 64 hex digits.
    pub fn cache_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
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
                out.push_str(&serde_json::to_string(k).expect("string"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => {
            let _ = write!(out, "{other}");
        }
    }
}

/// Anything that turns a chat request into the first choice's text.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Cache-first completion. Returns the text and whether it was a hit.
pub fn cached_complete(
    request: &CompletionRequest,
    cache: &ResponseCache,
    provider: &dyn ChatProvider,
) -> Result<(String, bool), LlmError> {
    request.validate()?;
    let key = request.cache_key();
    if let Some(text) = cache.get(&key) {
        return Ok((text, true));
    }
    let text = provider.complete(request)?;
    cache.insert(CacheEntry::new(key, request, text.clone()))?;
    Ok((text, false))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
}

/// Provider + optional cache + fixed model settings, with call counters.
pub struct Client {
    provider: Arc<dyn ChatProvider>,
    cache: Option<Arc<ResponseCache>>,
    model: String,
    temperature: f64,
    provider_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Client {
    pub fn new(provider: Arc<dyn ChatProvider>, model: impl Into<String>, temperature: f64) -> Self {
        Client {
            provider,
            cache: None,
            model: model.into(),
            temperature,
            provider_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn request(&self, messages: &[ChatMessage]) -> CompletionRequest {
        CompletionRequest { model: self.model.clone(), messages: messages.to_vec(), temperature: self.temperature }
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let request = self.request(messages);
        request.validate()?;
        if let Some(cache) = &self.cache {
            let key = request.cache_key();
            if let Some(text) = cache.get(&key) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Completion { text, cached: true });
            }
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            let text = self.provider.complete(&request)?;
            cache.insert(CacheEntry::new(key, &request, text.clone()))?;
            return Ok(Completion { text, cached: false });
        }
        self.provider_calls.fetch_add(1, Ordering::Relaxed);
        let text = self.provider.complete(&request)?;
        Ok(Completion { text, cached: false })
    }

    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }
}
