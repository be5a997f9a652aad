//! Parsing model responses into patch proposals and applying them.
//!
//! Diff responses use SEARCH/REPLACE blocks:
//!
//! ```text
//! <<<<<<< SEARCH
//! old lines
//! =======
//! new lines
//! >>>>>>> REPLACE
//! ```
//!
//! Full rewrites and crossovers return the whole program inside one fenced
//! code block. Either way the immutable segments of the result must match
//! the original byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::blocks::{parse_blocks, BlockError};
use crate::archive::PatchType;

pub const SEARCH_OPEN: &str = "<<<<<<< SEARCH";
pub const DIVIDER: &str = "=======";
pub const REPLACE_CLOSE: &str = ">>>>>>> REPLACE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchReplace {
    pub search: String,
    pub replace: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PatchPayload {
    Diff(Vec<SearchReplace>),
    Program(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchProposal {
    pub patch_type: PatchType,
    pub payload: PatchPayload,
    pub model_name: String,
    pub temperature: f64,
    pub raw_response: String,
}

/// Parse failure that is fed back to the model on the next attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{0}")]
pub struct RetryableParseError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SearchNotFound,
    ImmutableTouched,
    AmbiguousMatch,
    InvalidStructure,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::SearchNotFound => "search_not_found",
            RejectReason::ImmutableTouched => "immutable_touched",
            RejectReason::AmbiguousMatch => "ambiguous_match",
            RejectReason::InvalidStructure => "invalid_structure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("patch rejected ({}): {detail}", reason.as_str())]
pub struct PatchRejected {
    pub reason: RejectReason,
    pub detail: String,
}

impl PatchRejected {
    fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("original program has invalid EVOLVE-BLOCK markers: {0}")]
    Source(#[from] BlockError),
    #[error(transparent)]
    Rejected(#[from] PatchRejected),
}

fn is_line(line: &str, marker: &str) -> bool {
    line.trim_end() == marker
}

pub fn parse_diff_blocks(raw: &str) -> Result<Vec<SearchReplace>, RetryableParseError> {
    #[derive(PartialEq)]
    enum State {
        Outside,
        Search,
        Replace,
    }
    let mut state = State::Outside;
    let mut pairs = Vec::new();
    let mut search = String::new();
    let mut replace = String::new();

    for line in raw.split_inclusive('\n') {
        match state {
            State::Outside if is_line(line, SEARCH_OPEN) => state = State::Search,
            State::Outside => {}
            State::Search if is_line(line, DIVIDER) => state = State::Replace,
            State::Search if is_line(line, SEARCH_OPEN) || is_line(line, REPLACE_CLOSE) => {
                return Err(RetryableParseError(format!(
                    "SEARCH block {} is missing its '{DIVIDER}' divider",
                    pairs.len() + 1
                )))
            }
            State::Search => search.push_str(line),
            State::Replace if is_line(line, REPLACE_CLOSE) => {
                if search.is_empty() {
                    return Err(RetryableParseError(format!(
                        "SEARCH block {} has an empty search section",
                        pairs.len() + 1
                    )));
                }
                pairs.push(SearchReplace {
                    search: std::mem::take(&mut search),
                    replace: std::mem::take(&mut replace),
                });
                state = State::Outside;
            }
            State::Replace => replace.push_str(line),
        }
    }
    if state != State::Outside {
        return Err(RetryableParseError(format!(
            "SEARCH block {} is not terminated by '{REPLACE_CLOSE}'",
            pairs.len() + 1
        )));
    }
    if pairs.is_empty() {
        return Err(RetryableParseError("no SEARCH/REPLACE block found".into()));
    }
    Ok(pairs)
}

/// Body of the first fenced code block.
pub fn extract_fenced_code(raw: &str) -> Result<String, RetryableParseError> {
    let mut body = String::new();
    let mut inside = false;
    for line in raw.split_inclusive('\n') {
        let fence = line.trim_start().starts_with("```");
        if !inside && fence {
            inside = true;
        } else if inside && fence && line.trim() == "```" {
            return Ok(body);
        } else if inside {
            body.push_str(line);
        }
    }
    if inside {
        Err(RetryableParseError("fenced code block is never closed".into()))
    } else {
        Err(RetryableParseError("no fenced code block found".into()))
    }
}

pub fn parse_response(
    raw: &str,
    patch_type: PatchType,
    model_name: &str,
    temperature: f64,
) -> Result<PatchProposal, RetryableParseError> {
    if raw.trim().is_empty() {
        return Err(RetryableParseError("empty response".into()));
    }
    let payload = match patch_type {
        PatchType::Diff => PatchPayload::Diff(parse_diff_blocks(raw)?),
        PatchType::Full | PatchType::Cross => PatchPayload::Program(extract_fenced_code(raw)?),
        PatchType::Init => {
            return Err(RetryableParseError(
                "the initial program is not produced by a mutation".into(),
            ))
        }
    };
    Ok(PatchProposal {
        patch_type,
        payload,
        model_name: model_name.to_string(),
        temperature,
        raw_response: raw.to_string(),
    })
}

fn preview(text: &str) -> String {
    let first = text.lines().next().unwrap_or("");
    if first.len() > 60 || text.lines().count() > 1 {
        format!("'{}...'", first.chars().take(60).collect::<String>())
    } else {
        format!("'{first}'")
    }
}

fn apply_pair(code: &str, pair: &SearchReplace, index: usize) -> Result<String, ApplyError> {
    let blocks = parse_blocks(code).map_err(|e| {
        PatchRejected::new(
            RejectReason::InvalidStructure,
            format!("after pair {index} the markers became invalid: {e}"),
        )
    })?;
    let ranges = blocks.mutable_ranges();
    let hits: Vec<usize> = code.match_indices(&pair.search).map(|(i, _)| i).collect();
    let inside: Vec<usize> = hits
        .iter()
        .copied()
        .filter(|&start| {
            let end = start + pair.search.len();
            ranges.iter().any(|r| r.start <= start && end <= r.end)
        })
        .collect();
    match (inside.len(), hits.len()) {
        (1, _) => {
            let start = inside[0];
            let mut out = String::with_capacity(code.len() + pair.replace.len());
            out.push_str(&code[..start]);
            out.push_str(&pair.replace);
            out.push_str(&code[start + pair.search.len()..]);
            Ok(out)
        }
        (0, 0) => Err(PatchRejected::new(
            RejectReason::SearchNotFound,
            format!(
                "search text {} of pair {index} does not occur in the program",
                preview(&pair.search)
            ),
        )
        .into()),
        (0, _) => Err(PatchRejected::new(
            RejectReason::ImmutableTouched,
            format!(
                "search text {} of pair {index} only matches outside the EVOLVE-BLOCK regions",
                preview(&pair.search)
            ),
        )
        .into()),
        (n, _) => Err(PatchRejected::new(
            RejectReason::AmbiguousMatch,
            format!(
                "search text {} of pair {index} matches {n} times; include more context so it is unique",
                preview(&pair.search)
            ),
        )
        .into()),
    }
}

/// Fenced extraction always yields a trailing newline; mirror the original's.
fn match_trailing_newline(original: &str, rewritten: &str) -> String {
    match (original.ends_with('\n'), rewritten.ends_with('\n')) {
        (false, true) => rewritten[..rewritten.len() - 1].to_string(),
        (true, false) => format!("{rewritten}\n"),
        _ => rewritten.to_string(),
    }
}

/// Applies a proposal. The result always re-parses and keeps every
/// immutable segment of `code` unchanged.
pub fn apply_patch(code: &str, proposal: &PatchProposal) -> Result<String, ApplyError> {
    let original = parse_blocks(code)?;
    let candidate = match &proposal.payload {
        PatchPayload::Diff(pairs) => {
            let mut current = code.to_string();
            for (i, pair) in pairs.iter().enumerate() {
                current = apply_pair(&current, pair, i + 1)?;
            }
            current
        }
        PatchPayload::Program(text) => match_trailing_newline(code, text),
    };
    let updated = parse_blocks(&candidate).map_err(|e| {
        PatchRejected::new(
            RejectReason::ImmutableTouched,
            format!("patched program has invalid EVOLVE-BLOCK markers: {e}"),
        )
    })?;
    if updated.immutable_segments() != original.immutable_segments() {
        return Err(PatchRejected::new(
            RejectReason::ImmutableTouched,
            "code outside the EVOLVE-BLOCK regions was changed; keep it byte-identical",
        )
        .into());
    }
    Ok(candidate)
}
