//! Chat-completion HTTP backend.
//!
//! Selection runs must fail loudly rather than silently skew measured
//! losses, so transport failures are retried with exponential backoff and
//! then surfaced as hard errors.

use std::time::Duration;

use serde_json::{json, Value};

use super::{DecodeParams, GenerationBackend};
use crate::error::{Error, Result};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "EXPLORA_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub url: String,
    pub model: String,
    /// Backoff schedule; one retry per entry after the initial attempt.
    pub retry_delays: Vec<Duration>,
    pub request_timeout: Duration,
    /// Cache-key identity; defaults to `http:<model>`.
    pub name: Option<String>,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            url: url.into(),
            model: model.into(),
            retry_delays: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
            request_timeout: Duration::from_secs(120),
            name: None,
        }
    }

    /// No backoff; used by tests against a local stub server.
    pub fn without_retry_delays(mut self) -> Self {
        self.retry_delays = vec![Duration::ZERO; self.retry_delays.len()];
        self
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    name: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Build a backend, reading the API key from `EXPLORA_API_KEY`.
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| {
            Error::validation(format!("environment variable {API_KEY_ENV} is not set"))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| Error::validation(format!("http client: {e}")))?;
        let name = config
            .name
            .clone()
            .unwrap_or_else(|| format!("http:{}", config.model));
        Ok(HttpBackend {
            config,
            name,
            api_key,
            client,
        })
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, String> {
        let response = self
            .client
            .post(&self.config.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        let text = response.text().map_err(|e| format!("body read: {e}"))?;
        if !status.is_success() {
            return Err(format!("status {status}: {}", truncate(&text, 200)));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| format!("bad json: {e}"))?;
        extract_content(&value).ok_or_else(|| {
            format!("no choices[0].message.content in {}", truncate(&text, 200))
        })
    }
}

impl GenerationBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, params: &DecodeParams, _sample_index: u32) -> Result<String> {
        let body = chat_request_body(&self.config.model, prompt, params);
        let mut last_err = String::new();
        for (attempt, delay) in std::iter::once(None)
            .chain(self.config.retry_delays.iter().map(Some))
            .enumerate()
        {
            if let Some(delay) = delay {
                std::thread::sleep(*delay);
            }
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(e) => last_err = format!("attempt {}: {e}", attempt + 1),
            }
        }
        Err(Error::Backend {
            backend: self.name.clone(),
            prompt_hash: super::prompt_hash(prompt),
            msg: last_err,
        })
    }
}

/// The chat-completion request body: the whole prompt travels as a single
/// user message and `n` is pinned to 1 (samples are separate requests).
pub fn chat_request_body(model: &str, prompt: &str, params: &DecodeParams) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "frequency_penalty": params.frequency_penalty,
        "presence_penalty": params.presence_penalty,
        "n": 1,
    })
}

/// Pull `choices[0].message.content` out of a chat-completion response.
pub fn extract_content(value: &Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}
