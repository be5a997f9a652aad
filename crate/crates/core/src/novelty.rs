//! Near-duplicate rejection by code-embedding similarity.
//!
//! The candidate's mutable code is embedded and compared by cosine
//! similarity against the cached embeddings of its island. Above the
//! threshold an LLM judge decides; its answer fails open, so only a first
//! line reading `NO` rejects.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::ProgramRecord;
use crate::llm::{Gateway, ProviderError};
use crate::mutation::blocks::{parse_blocks, BlockError};
use crate::mutation::prompt::render_template;

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum NoveltyError {
    #[error("cannot compare vectors of dimension {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Blocks(#[from] BlockError),
    #[error("embedding failed: {0}")]
    Provider(#[from] ProviderError),
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, NoveltyError> {
    if u.len() != v.len() {
        return Err(NoveltyError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(NoveltyError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Embeds only the EVOLVE-BLOCK contents of `code`.
pub fn embed_mutable(code: &str, gateway: &Gateway, model: &str) -> Result<Vec<f64>, NoveltyError> {
    let mutable = parse_blocks(code)?.mutable_code();
    Ok(gateway.embed(model, &mutable)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyMode {
    /// Every proposal is accepted.
    Off,
    /// Proposals above the threshold are rejected without a judge.
    Embedding,
    /// Proposals above the threshold go to the judge.
    EmbeddingJudge,
}

impl NoveltyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoveltyMode::Off => "off",
            NoveltyMode::Embedding => "embedding",
            NoveltyMode::EmbeddingJudge => "embedding_judge",
        }
    }
}

impl fmt::Display for NoveltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoveltyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [NoveltyMode::Off, NoveltyMode::Embedding, NoveltyMode::EmbeddingJudge]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown novelty mode '{s}' (expected off, embedding, embedding_judge)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyDecision {
    AcceptByEmbedding,
    AcceptByJudge,
    RejectByJudge,
    RejectByEmbedding,
    Disabled,
}

impl NoveltyDecision {
    pub fn accepted(self) -> bool {
        !matches!(self, NoveltyDecision::RejectByJudge | NoveltyDecision::RejectByEmbedding)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoveltyDecision::AcceptByEmbedding => "accept_by_embedding",
            NoveltyDecision::AcceptByJudge => "accept_by_judge",
            NoveltyDecision::RejectByJudge => "reject_by_judge",
            NoveltyDecision::RejectByEmbedding => "reject_by_embedding",
            NoveltyDecision::Disabled => "disabled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyVerdict {
    /// -1 when there was nothing to compare against.
    pub max_similarity: f64,
    pub nearest_id: Option<String>,
    pub decision: NoveltyDecision,
    pub judge_rationale: Option<String>,
}

impl NoveltyVerdict {
    pub fn disabled() -> Self {
        Self {
            max_similarity: -1.0,
            nearest_id: None,
            decision: NoveltyDecision::Disabled,
            judge_rationale: None,
        }
    }
}

/// `true` unless the first non-empty line of a judge reply is `NO`.
pub fn judge_says_novel(reply: &str) -> bool {
    let first = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let word: String = first
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    word != "NO"
}

pub fn judge_prompt(template: &str, language: &str, candidate: &str, neighbor: &str, similarity: f64) -> String {
    let mut values = BTreeMap::new();
    values.insert("language", language.to_string());
    values.insert("candidate_code", candidate.trim_end_matches('\n').to_string());
    values.insert("neighbor_code", neighbor.trim_end_matches('\n').to_string());
    values.insert("similarity", format!("{similarity:.4}"));
    render_template(template, &values).trim_end_matches('\n').to_string()
}

/// Nearest island member by cosine similarity. Members without a cached
/// embedding, and zero vectors, are skipped.
pub fn nearest<'a>(
    candidate: &[f64],
    members: &[&'a ProgramRecord],
) -> Result<Option<(f64, &'a ProgramRecord)>, NoveltyError> {
    let mut best: Option<(f64, &ProgramRecord)> = None;
    for m in members {
        let Some(e) = &m.embedding else { continue };
        let s = match cosine(candidate, e) {
            Ok(s) => s,
            Err(NoveltyError::ZeroVector) => continue,
            Err(other) => return Err(other),
        };
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, m));
        }
    }
    Ok(best)
}

/// Decides whether a candidate is novel relative to `members`.
///
/// `judge` receives the nearest member and the similarity and returns the
/// raw judge reply; it is only called in [`NoveltyMode::EmbeddingJudge`].
pub fn check_novelty(
    mode: NoveltyMode,
    candidate_embedding: &[f64],
    members: &[&ProgramRecord],
    threshold: f64,
    judge: &mut dyn FnMut(&ProgramRecord, f64) -> Result<String, ProviderError>,
) -> Result<NoveltyVerdict, NoveltyError> {
    if mode == NoveltyMode::Off {
        return Ok(NoveltyVerdict::disabled());
    }
    let Some((similarity, neighbor)) = nearest(candidate_embedding, members)? else {
        return Ok(NoveltyVerdict {
            max_similarity: -1.0,
            nearest_id: None,
            decision: NoveltyDecision::AcceptByEmbedding,
            judge_rationale: None,
        });
    };
    let mut verdict = NoveltyVerdict {
        max_similarity: similarity,
        nearest_id: Some(neighbor.id.clone()),
        decision: NoveltyDecision::AcceptByEmbedding,
        judge_rationale: None,
    };
    if similarity <= threshold {
        return Ok(verdict);
    }
    if mode == NoveltyMode::Embedding {
        verdict.decision = NoveltyDecision::RejectByEmbedding;
        return Ok(verdict);
    }
    match judge(neighbor, similarity) {
        Ok(reply) => {
            verdict.decision = if judge_says_novel(&reply) {
                NoveltyDecision::AcceptByJudge
            } else {
                NoveltyDecision::RejectByJudge
            };
            verdict.judge_rationale = Some(reply);
        }
        Err(e) => {
            tracing::warn!(error = %e, "novelty judge failed, accepting");
            verdict.decision = NoveltyDecision::AcceptByJudge;
            verdict.judge_rationale = Some(format!("judge unavailable: {e}"));
        }
    }
    Ok(verdict)
}
