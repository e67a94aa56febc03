//! Prompt construction, pluggable generation backends, decoding, persistent
//! response caching, and call accounting.

mod cache;
mod decode;
mod http;
mod prompt;
mod simulator;

pub use cache::ResponseCache;
pub use decode::{decode_regex, decode_self_consistency, DEFAULT_ANSWER_PATTERN};
pub use http::{HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use prompt::{build_prompt, PromptSpec};
pub use simulator::{SimulatedBackend, SimulatedBackendConfig, SimulatorMode};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::hex;
use crate::error::{Error, Result};

/// Generation hyperparameters sent to a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    /// 1 = single sample; greater values enable self-consistency voting.
    pub num_samples: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.3,
            max_tokens: 900,
            frequency_penalty: 0.8,
            presence_penalty: 0.6,
            num_samples: 1,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::validation("temperature must be >= 0"));
        }
        if self.max_tokens < 1 {
            return Err(Error::validation("max_tokens must be >= 1"));
        }
        if self.num_samples < 1 {
            return Err(Error::validation("num_samples must be >= 1"));
        }
        Ok(())
    }

    /// Canonical rendering used in cache keys: fixed field order and fixed
    /// decimal precision, so semantically equal params collide.
    pub fn canonical(&self) -> String {
        format!(
            "t={:.6};mt={};fp={:.6};pp={:.6}",
            self.temperature, self.max_tokens, self.frequency_penalty, self.presence_penalty
        )
    }

    pub fn with_samples(mut self, num_samples: u32) -> Self {
        self.num_samples = num_samples;
        self
    }
}

/// Anything that can turn a prompt into a response.
///
/// `sample_index` distinguishes repeated draws for self-consistency; a
/// deterministic backend must return the same text for the same
/// (prompt, params, sample_index).
pub trait GenerationBackend: Send + Sync {
    /// Stable identifier, used in cache keys.
    fn name(&self) -> &str;

    fn generate(&self, prompt: &str, params: &DecodeParams, sample_index: u32) -> Result<String>;
}

/// Monotone counters separating real backend calls from cache hits.
#[derive(Debug, Default)]
pub struct CallCounter {
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

/// A point-in-time copy of [`CallCounter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSnapshot {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_backend_call(&self) {
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallSnapshot {
        CallSnapshot {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

pub(crate) fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    hex(&hasher.finalize())
}

/// Short hash identifying a prompt in logs, cache lines, and errors.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())[..16].to_string()
}

/// Cache key over (backend name, prompt, canonical params, sample index).
/// Fields are length-prefixed so adjacent fields cannot alias.
pub fn cache_key(backend: &str, prompt: &str, params: &DecodeParams, sample_index: u32) -> String {
    let mut hasher = Sha256::new();
    for field in [backend, prompt, params.canonical().as_str()] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hasher.update(sample_index.to_le_bytes());
    hex(&hasher.finalize())
}

/// Generate `params.num_samples` responses, serving repeats from the cache.
///
/// Responses come back in sample-index order. Every requested sample counts
/// as either one cache hit or one backend call, never both.
pub fn generate_cached(
    backend: &dyn GenerationBackend,
    cache: &ResponseCache,
    counter: &CallCounter,
    prompt: &str,
    params: &DecodeParams,
) -> Result<Vec<String>> {
    params.validate()?;
    let phash = prompt_hash(prompt);
    let mut responses = Vec::with_capacity(params.num_samples as usize);
    for sample_index in 0..params.num_samples {
        let key = cache_key(backend.name(), prompt, params, sample_index);
        if let Some(hit) = cache.get(&key) {
            counter.record_cache_hit();
            responses.push(hit);
            continue;
        }
        let response = backend
            .generate(prompt, params, sample_index)
            .map_err(|e| Error::Backend {
                backend: backend.name().to_string(),
                prompt_hash: phash.clone(),
                msg: e.to_string(),
            })?;
        counter.record_backend_call();
        // insert returns the canonical stored value, so racing callers all
        // observe one consistent response.
        responses.push(cache.insert(&key, &phash, &response)?);
    }
    Ok(responses)
}
