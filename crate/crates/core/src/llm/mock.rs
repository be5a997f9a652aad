//! Deterministic offline providers.

use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{prompt_hash, ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};
use crate::mutation::patch::extract_fenced_code;

/// Code of the first fenced block following `heading` in a prompt.
pub fn fenced_after(prompt: &str, heading: &str) -> Option<String> {
    let start = prompt.find(heading)?;
    extract_fenced_code(&prompt[start..]).ok()
}

/// Program under mutation, as rendered in the "# Current program" section.
pub fn current_program(prompt: &str) -> Option<String> {
    fenced_after(prompt, "# Current program")
}

pub fn fence(code: &str) -> String {
    format!("```\n{}\n```\n", code.trim_end_matches('\n'))
}

pub struct EchoParent;

impl ChatProvider for EchoParent {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let code = current_program(&request.prompt)
            .ok_or_else(|| ProviderError::Malformed("prompt has no current program".into()))?;
        Ok(format!("Keeping the program as it is.\n{}", fence(&code)))
    }
}

pub struct StaticText(pub String);

impl ChatProvider for StaticText {
    fn complete(&self, _: &ChatRequest) -> Result<String, ProviderError> {
        Ok(self.0.clone())
    }
}

pub struct Canned {
    pub responses: BTreeMap<String, String>,
    pub default: Option<String>,
}

impl ChatProvider for Canned {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = prompt_hash(&request.prompt);
        self.responses
            .get(&key)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| ProviderError::Malformed(format!("no canned response for prompt hash {key}")))
    }
}

pub struct Sequence {
    responses: Vec<String>,
    next: Mutex<usize>,
}

impl Sequence {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            next: Mutex::new(0),
        }
    }
}

impl ChatProvider for Sequence {
    fn complete(&self, _: &ChatRequest) -> Result<String, ProviderError> {
        let mut next = self.next.lock().expect("sequence lock");
        let response = self.responses[(*next).min(self.responses.len() - 1)].clone();
        *next += 1;
        Ok(response)
    }
}

/// Says NO exactly when the two programs in a judge prompt are identical.
pub struct DuplicateJudge;

impl ChatProvider for DuplicateJudge {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let candidate = fenced_after(&request.prompt, "# Proposed program");
        let neighbor = fenced_after(&request.prompt, "# Most similar existing program");
        match (candidate, neighbor) {
            (Some(a), Some(b)) if a == b => Ok("NO\nThe programs are identical.".into()),
            (Some(_), Some(_)) => Ok("YES\nThe programs differ.".into()),
            _ => Err(ProviderError::Malformed("judge prompt lacks the two programs".into())),
        }
    }
}

pub struct Tripwire(pub String);

impl ChatProvider for Tripwire {
    fn complete(&self, _: &ChatRequest) -> Result<String, ProviderError> {
        Err(ProviderError::Tripwire(self.0.clone()))
    }
}

impl EmbeddingProvider for Tripwire {
    fn embed(&self, _: &str, _: &str) -> Result<Vec<f64>, ProviderError> {
        Err(ProviderError::Tripwire(self.0.clone()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Counts of character n-grams hashed into `dim` buckets.
pub struct HashedNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl HashedNgramEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0; self.dim];
        if chars.is_empty() {
            return v;
        }
        let width = self.n.min(chars.len());
        for gram in chars.windows(width) {
            let s: String = gram.iter().collect();
            v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn embed(&self, _: &str, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.vector(text))
    }
}
