use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, CompletionRequest, LlmError, ProviderConfig, RetryPolicy};

/// POSTs JSON, retrying transport failures, 429 and 5xx per `retry`.
/// Other non-success statuses fail immediately.
pub fn post_json_with_retry(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    retry: &RetryPolicy,
) -> Result<Value, LlmError> {
    let attempts = retry.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(retry.delay(attempt - 1));
        }
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                if status.is_success() {
                    return serde_json::from_str(&text)
                        .map_err(|e| LlmError::MalformedResponse(format!("{e}: {}", truncate(&text))));
                }
                if status.as_u16() == 429 || status.is_server_error() {
                    tracing::warn!(%url, status = status.as_u16(), attempt, "retryable provider status");
                    last = format!("HTTP {}: {}", status.as_u16(), truncate(&text));
                    continue;
                }
                return Err(LlmError::Provider { status: Some(status.as_u16()), message: truncate(&text) });
            }
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                tracing::warn!(%url, attempt, error = %e, "transport failure");
                last = e.to_string();
            }
            Err(e) => return Err(LlmError::Provider { status: None, message: e.to_string() }),
        }
    }
    Err(LlmError::TimeoutExhausted { attempts, last })
}

fn truncate(s: &str) -> String {
    const MAX: usize = 500;
    if s.len() <= MAX {
        return s.to_string();
    }
    let mut end = MAX;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

/// `POST {base_url}/chat/completions` against an OpenAI-compatible server.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| LlmError::Provider { status: None, message: e.to_string() })?;
        Ok(HttpProvider {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            retry: config.retry.clone(),
        })
    }

    /// Reads the bearer token from `config.api_key_env` when set.
    pub fn from_env(config: &ProviderConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let value = post_json_with_retry(&self.client, &self.url, self.api_key.as_deref(), &body, &self.retry)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::MalformedResponse(format!("no choices[0].message.content in {value}")))
    }
}
