use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::transcript::{TranscriptMode, TranscriptRecord};
use super::{
    chat_fingerprint, embedding_fingerprint, ChatProvider, ChatRequest, EmbeddingProvider,
    ModelSpec, ProviderError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
        }
    }
}

struct ChatEntry {
    spec: ModelSpec,
    provider: Arc<dyn ChatProvider>,
    options: BTreeMap<String, serde_json::Value>,
}

pub struct Gateway {
    chat: BTreeMap<String, ChatEntry>,
    embedding: BTreeMap<String, Arc<dyn EmbeddingProvider>>,
    transcript: TranscriptMode,
    retry: RetryPolicy,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(transcript: TranscriptMode, retry: RetryPolicy) -> Self {
        Self {
            chat: BTreeMap::new(),
            embedding: BTreeMap::new(),
            transcript,
            retry,
            calls: AtomicU64::new(0),
        }
    }

    pub fn register_chat(&mut self, spec: ModelSpec, provider: Arc<dyn ChatProvider>) {
        self.register_chat_with_options(spec, provider, BTreeMap::new());
    }

    pub fn register_chat_with_options(
        &mut self,
        spec: ModelSpec,
        provider: Arc<dyn ChatProvider>,
        options: BTreeMap<String, serde_json::Value>,
    ) {
        self.chat.insert(
            spec.name.clone(),
            ChatEntry {
                spec,
                provider,
                options,
            },
        );
    }

    pub fn register_embedding(&mut self, name: &str, provider: Arc<dyn EmbeddingProvider>) {
        self.embedding.insert(name.to_string(), provider);
    }

    pub fn spec(&self, name: &str) -> Option<&ModelSpec> {
        self.chat.get(name).map(|e| &e.spec)
    }

    pub fn transcript(&self) -> &TranscriptMode {
        &self.transcript
    }

    /// Provider calls issued so far, counting replayed ones.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts.max(1) => {
                    let delay = self.retry.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                    tracing::warn!(attempt, error = %e, "provider call failed, retrying");
                    if delay > 0 {
                        thread::sleep(Duration::from_millis(delay));
                    }
                }
                other => return other,
            }
        }
    }

    fn replay_or_call(
        &self,
        fingerprint: String,
        model: &str,
        temperature: f64,
        live: impl FnMut() -> Result<String, ProviderError>,
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response = match &self.transcript {
            TranscriptMode::Replay { store, .. } => store.lookup(&fingerprint)?,
            _ => self.with_retries(live)?,
        };
        if let Some(recorder) = self.transcript.recorder() {
            recorder.append(&TranscriptRecord {
                fingerprint,
                model: model.to_string(),
                temperature,
                response: response.clone(),
            })?;
        }
        Ok(response)
    }

    pub fn complete(
        &self,
        model: &str,
        temperature: f64,
        prompt: &str,
    ) -> Result<String, ProviderError> {
        let entry = self
            .chat
            .get(model)
            .ok_or_else(|| ProviderError::UnknownModel(model.to_string()))?;
        let request = ChatRequest {
            model: model.to_string(),
            temperature,
            max_tokens: entry.spec.max_tokens,
            prompt: prompt.to_string(),
            options: entry.options.clone(),
        };
        self.replay_or_call(
            chat_fingerprint(model, temperature, prompt),
            model,
            temperature,
            || entry.provider.complete(&request),
        )
    }

    pub fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, ProviderError> {
        let provider = self
            .embedding
            .get(model)
            .ok_or_else(|| ProviderError::UnknownModel(model.to_string()))?;
        let raw = self.replay_or_call(embedding_fingerprint(model, text), model, 0.0, || {
            provider
                .embed(model, text)
                .map(|v| serde_json::to_string(&v).expect("vector serializes"))
        })?;
        serde_json::from_str(&raw).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}
