//! Provider abstraction for chat completion and embedding models.
//!
//! Every call goes through a [`Gateway`], which fingerprints the request,
//! retries transport failures and records or replays transcripts. Vendor
//! adapters speak HTTP; the mock providers in [`mock`] are deterministic
//! functions of the request and back the offline mode.

mod gateway;
pub mod mock;
pub mod transcript;
pub mod vendor;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use gateway::{Gateway, RetryPolicy};
pub use transcript::{TranscriptMode, TranscriptRecord, TRANSCRIPT_SCHEMA};

use crate::bandit::BanditState;
use crate::tasks::synthetic::ScriptedVectorMutator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Chat,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub endpoint_kind: EndpointKind,
    pub temperatures: Vec<f64>,
    pub max_tokens: u32,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperatures.is_empty() {
            return Err(format!("model '{}' has no temperatures", self.name));
        }
        if let Some(t) = self
            .temperatures
            .iter()
            .find(|t| !(0.0..=2.0).contains(*t))
        {
            return Err(format!(
                "model '{}' temperature {t} outside [0, 2]",
                self.name
            ));
        }
        if self.max_tokens == 0 {
            return Err(format!("model '{}' max_tokens must be positive", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
    /// Vendor-specific knobs passed through untouched.
    pub options: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("vendor returned HTTP {status}: {payload}")]
    Vendor { status: u16, payload: String },
    #[error("replay transcript has no response for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("live provider '{0}' was called during replay")]
    Tripwire(String),
    #[error("model '{0}' is not registered")]
    UnknownModel(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("transcript I/O: {0}")]
    Transcript(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
            || matches!(self, ProviderError::Vendor { status, .. } if *status == 429 || *status >= 500)
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, ProviderError>;
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Stable identity of a chat request: hash of model, temperature bits and prompt.
pub fn chat_fingerprint(model: &str, temperature: f64, prompt: &str) -> String {
    hex_digest(&[
        b"chat",
        model.as_bytes(),
        &temperature.to_bits().to_be_bytes(),
        prompt.as_bytes(),
    ])
}

pub fn embedding_fingerprint(model: &str, text: &str) -> String {
    hex_digest(&[b"embedding", model.as_bytes(), text.as_bytes()])
}

/// Hash of a prompt alone, used as the key of canned mock responses.
pub fn prompt_hash(prompt: &str) -> String {
    hex_digest(&[prompt.as_bytes()])
}

/// How a provider is constructed. The `kind` field selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// OpenAI chat completions or any API-compatible endpoint.
    Openai {
        model: Option<String>,
        base_url: Option<String>,
        api_key_env: Option<String>,
        #[serde(default)]
        options: BTreeMap<String, serde_json::Value>,
    },
    Anthropic {
        model: Option<String>,
        base_url: Option<String>,
        api_key_env: Option<String>,
        #[serde(default)]
        options: BTreeMap<String, serde_json::Value>,
    },
    OpenaiEmbedding {
        model: Option<String>,
        base_url: Option<String>,
        api_key_env: Option<String>,
    },
    /// Synthetic-task mutator moving one coordinate toward the target with probability `q`.
    ScriptedVector { target: Vec<f64>, q: f64, step: f64 },
    /// Returns the parent program unchanged as a full rewrite.
    EchoParent,
    StaticText { text: String },
    /// Responses keyed by prompt hash, with an optional fallback.
    Canned {
        responses: BTreeMap<String, String>,
        default: Option<String>,
    },
    /// Returns the listed responses in call order, repeating the last one.
    Sequence { responses: Vec<String> },
    /// Novelty judge that answers NO only for byte-identical programs.
    DuplicateJudge,
    /// Character n-gram count embedding hashed into `dim` buckets.
    HashedNgram { dim: usize, n: usize },
    /// Fails every call.
    Tripwire,
}

impl ProviderConfig {
    pub fn endpoint_kind(&self) -> EndpointKind {
        match self {
            ProviderConfig::OpenaiEmbedding { .. } | ProviderConfig::HashedNgram { .. } => {
                EndpointKind::Embedding
            }
            _ => EndpointKind::Chat,
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(
            self,
            ProviderConfig::Openai { .. }
                | ProviderConfig::Anthropic { .. }
                | ProviderConfig::OpenaiEmbedding { .. }
        )
    }

    pub fn validate(&self, name: &str) -> Result<(), String> {
        match self {
            ProviderConfig::ScriptedVector { target, q, step } => {
                if target.is_empty() {
                    return Err(format!("provider '{name}': target must have dimension >= 1"));
                }
                if !(0.0..=1.0).contains(q) {
                    return Err(format!("provider '{name}': q must lie in [0, 1]"));
                }
                if !(step.is_finite() && *step > 0.0) {
                    return Err(format!("provider '{name}': step must be positive"));
                }
            }
            ProviderConfig::HashedNgram { dim, n } => {
                if *dim == 0 || *n == 0 {
                    return Err(format!("provider '{name}': dim and n must be >= 1"));
                }
            }
            ProviderConfig::Sequence { responses } if responses.is_empty() => {
                return Err(format!("provider '{name}': sequence needs at least one response"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_chat(&self, name: &str) -> Option<Arc<dyn ChatProvider>> {
        let provider: Arc<dyn ChatProvider> = match self.clone() {
            ProviderConfig::Openai {
                model,
                base_url,
                api_key_env,
                options,
            } => Arc::new(vendor::OpenAiChat::new(
                model.unwrap_or_else(|| name.to_string()),
                base_url,
                api_key_env,
                options,
            )),
            ProviderConfig::Anthropic {
                model,
                base_url,
                api_key_env,
                options,
            } => Arc::new(vendor::AnthropicChat::new(
                model.unwrap_or_else(|| name.to_string()),
                base_url,
                api_key_env,
                options,
            )),
            ProviderConfig::ScriptedVector { target, q, step } => {
                Arc::new(ScriptedVectorMutator::new(target, q, step))
            }
            ProviderConfig::EchoParent => Arc::new(mock::EchoParent),
            ProviderConfig::StaticText { text } => Arc::new(mock::StaticText(text)),
            ProviderConfig::Canned { responses, default } => {
                Arc::new(mock::Canned { responses, default })
            }
            ProviderConfig::Sequence { responses } => Arc::new(mock::Sequence::new(responses)),
            ProviderConfig::DuplicateJudge => Arc::new(mock::DuplicateJudge),
            ProviderConfig::Tripwire => Arc::new(mock::Tripwire(name.to_string())),
            ProviderConfig::OpenaiEmbedding { .. } | ProviderConfig::HashedNgram { .. } => {
                return None
            }
        };
        Some(provider)
    }

    pub fn build_embedding(&self, name: &str) -> Option<Arc<dyn EmbeddingProvider>> {
        match self.clone() {
            ProviderConfig::OpenaiEmbedding {
                model,
                base_url,
                api_key_env,
            } => Some(Arc::new(vendor::OpenAiEmbedding::new(
                model.unwrap_or_else(|| name.to_string()),
                base_url,
                api_key_env,
            ))),
            ProviderConfig::HashedNgram { dim, n } => {
                Some(Arc::new(mock::HashedNgramEmbedder { dim, n }))
            }
            ProviderConfig::Tripwire => Some(Arc::new(mock::Tripwire(name.to_string()))),
            _ => None,
        }
    }
}

/// How the next mutation model is picked.
pub enum ModelSelector<'a> {
    Uniform,
    Bandit(&'a BanditState),
}

/// Draws a model from `pool` and a temperature uniformly from its list.
/// Returns the pool index alongside the choice.
pub fn sample_model<R: Rng + ?Sized>(
    selector: ModelSelector<'_>,
    pool: &[ModelSpec],
    rng: &mut R,
) -> (usize, ModelSpec, f64) {
    assert!(!pool.is_empty(), "model pool must not be empty");
    let index = match selector {
        ModelSelector::Uniform => rng.random_range(0..pool.len()),
        ModelSelector::Bandit(state) => state.choose(rng),
    };
    let spec = pool[index].clone();
    let temperature = spec.temperatures[rng.random_range(0..spec.temperatures.len())];
    (index, spec, temperature)
}
