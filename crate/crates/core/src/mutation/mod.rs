//! Mutation operators: prompt construction, response parsing and patch
//! application with parse-feedback resampling.

pub mod blocks;
pub mod patch;
pub mod prompt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::PatchType;
use crate::llm::ProviderError;
use crate::sampling::sample_index;
use patch::{apply_patch, parse_response, ApplyError, PatchProposal};

/// Draws a patch type with the configured probabilities.
pub fn sample_patch_type<R: Rng + ?Sized>(types: &[PatchType], probs: &[f64], rng: &mut R) -> PatchType {
    types[sample_index(probs, rng)]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptErrorKind {
    Parse,
    Patch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub kind: AttemptErrorKind,
    /// `search_not_found`, `immutable_touched`, ... for patch rejections.
    pub reason: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSuccess {
    pub proposal: PatchProposal,
    pub new_code: String,
    pub failed_attempts: Vec<AttemptLog>,
    pub provider_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalFailure {
    pub failed_attempts: Vec<AttemptLog>,
    pub provider_calls: u32,
    pub provider_error: Option<String>,
}

/// Prompt for a retry: the original prompt plus the reason the last answer
/// could not be used.
pub fn feedback_prompt(prompt: &str, error: &str) -> String {
    format!(
        "{prompt}\n\n# Your previous answer could not be applied\n{error}\nPlease answer again and follow the required format exactly."
    )
}

/// Queries `complete` until a response parses and applies cleanly to `code`,
/// at most `max_resamples` times. Each retry carries the previous error.
pub fn propose_with_retries(
    code: &str,
    prompt: &str,
    patch_type: PatchType,
    model_name: &str,
    temperature: f64,
    max_resamples: u32,
    complete: &mut dyn FnMut(&str) -> Result<String, ProviderError>,
) -> Result<ProposalSuccess, ProposalFailure> {
    let mut failed_attempts = Vec::new();
    let mut current_prompt = prompt.to_string();
    for attempt in 1..=max_resamples.max(1) {
        let raw = match complete(&current_prompt) {
            Ok(raw) => raw,
            Err(e) => {
                return Err(ProposalFailure {
                    failed_attempts,
                    provider_calls: attempt,
                    provider_error: Some(e.to_string()),
                })
            }
        };
        let outcome = parse_response(&raw, patch_type, model_name, temperature)
            .map_err(|e| AttemptLog {
                attempt,
                kind: AttemptErrorKind::Parse,
                reason: None,
                message: e.0,
            })
            .and_then(|proposal| match apply_patch(code, &proposal) {
                Ok(new_code) => Ok((proposal, new_code)),
                Err(ApplyError::Rejected(r)) => Err(AttemptLog {
                    attempt,
                    kind: AttemptErrorKind::Patch,
                    reason: Some(r.reason.as_str().to_string()),
                    message: r.to_string(),
                }),
                Err(ApplyError::Source(e)) => Err(AttemptLog {
                    attempt,
                    kind: AttemptErrorKind::Patch,
                    reason: Some("invalid_structure".into()),
                    message: e.to_string(),
                }),
            });
        match outcome {
            Ok((proposal, new_code)) => {
                return Ok(ProposalSuccess {
                    proposal,
                    new_code,
                    failed_attempts,
                    provider_calls: attempt,
                })
            }
            Err(log) => {
                current_prompt = feedback_prompt(prompt, &log.message);
                failed_attempts.push(log);
            }
        }
    }
    Err(ProposalFailure {
        provider_calls: max_resamples.max(1),
        failed_attempts,
        provider_error: None,
    })
}
