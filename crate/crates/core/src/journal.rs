//! Append-only event journal of a run.
//!
//! One JSON object per line after a header line carrying the schema
//! `shinka-journal/1`. Sequence numbers start at 1 and are gap-free; the
//! timestamp is the logical run clock and equals the sequence number, so a
//! journal is a pure function of the run's inputs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Migration, PatchType, ProgramRecord};
use crate::config::{ConfigOverrides, RunConfig};
use crate::mutation::AttemptLog;
use crate::novelty::NoveltyVerdict;
use crate::scheduler::FailureKind;

pub const JOURNAL_SCHEMA: &str = "shinka-journal/1";
pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("journal header invalid: {0}")]
    BadHeader(String),
    #[error("journal line {line} unparsable: {message}")]
    BadRecord { line: usize, message: String },
    #[error("journal sequence gap: expected {expected}, found {found} (sequence {expected} is missing)")]
    Gap { expected: u64, found: u64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOutcome {
    /// A candidate was written and queued for evaluation.
    Submitted,
    /// Every attempt ended in a parse error or a rejected patch.
    PatchFailed,
    /// The novelty filter rejected candidates until its cap was reached.
    NoveltyExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStart {
    pub preset: Option<String>,
    pub overrides: Option<ConfigOverrides>,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalEvent {
    pub outcome: ProposalOutcome,
    /// Sampling rounds used, each with its own context, patch type and model.
    pub rounds: u32,
    pub provider_calls: u32,
    pub program_id: Option<String>,
    pub island_id: usize,
    pub parent_id: String,
    pub crossover_partner_id: Option<String>,
    pub inspiration_ids: Vec<String>,
    pub patch_type: PatchType,
    pub model: String,
    pub temperature: f64,
    /// Evaluations handed to the coordinator before this proposal was created.
    pub completed_results: u64,
    pub archive_size: usize,
    /// Next-choice distribution over the model pool when the model was drawn.
    pub model_probabilities: Vec<f64>,
    pub provider_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryEvent {
    pub round: u32,
    pub model: String,
    pub log: AttemptLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltyRejectEvent {
    pub round: u32,
    pub parent_id: String,
    pub model: String,
    pub verdict: NoveltyVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalStartEvent {
    pub job_id: u64,
    pub program_id: String,
    pub program_path: String,
    /// Jobs submitted and not yet collected, this one included.
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDoneEvent {
    pub job_id: u64,
    pub program_id: String,
    pub combined_score: f64,
    pub public_metrics: BTreeMap<String, f64>,
    pub private_metrics: BTreeMap<String, f64>,
    pub text_feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFailEvent {
    pub job_id: u64,
    pub program_id: String,
    pub kind: FailureKind,
    pub message: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertEvent {
    pub record: ProgramRecord,
    pub evicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditUpdateEvent {
    pub arm: usize,
    pub model: String,
    pub program_id: Option<String>,
    pub fitness: Option<f64>,
    pub transformed_reward: f64,
    pub normalized_reward: f64,
    pub visits: u64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationEvent {
    pub moves: Vec<Migration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRefreshEvent {
    pub applied: bool,
    pub window: Vec<String>,
    pub recommendations: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    RunStart(Box<RunStart>),
    Proposal(ProposalEvent),
    ParseRetry(RetryEvent),
    PatchReject(RetryEvent),
    NoveltyReject(NoveltyRejectEvent),
    EvalStart(EvalStartEvent),
    EvalDone(EvalDoneEvent),
    EvalFail(EvalFailEvent),
    Insert(Box<InsertEvent>),
    BanditUpdate(BanditUpdateEvent),
    Migration(MigrationEvent),
    MetaRefresh(MetaRefreshEvent),
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::RunStart(_) => "run_start",
            Event::Proposal(_) => "proposal",
            Event::ParseRetry(_) => "parse_retry",
            Event::PatchReject(_) => "patch_reject",
            Event::NoveltyReject(_) => "novelty_reject",
            Event::EvalStart(_) => "eval_start",
            Event::EvalDone(_) => "eval_done",
            Event::EvalFail(_) => "eval_fail",
            Event::Insert(_) => "insert",
            Event::BanditUpdate(_) => "bandit_update",
            Event::Migration(_) => "migration",
            Event::MetaRefresh(_) => "meta_refresh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub generation: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Buffered journal writer. Records reach the file on [`flush`](Self::flush),
/// which the runner calls at every generation boundary.
#[derive(Debug)]
pub struct JournalWriter {
    path: PathBuf,
    out: BufWriter<File>,
    next_seq: u64,
    bytes: u64,
}

impl JournalWriter {
    pub fn create(path: &Path) -> Result<Self, JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let header = serde_json::to_string(&Header {
            schema: JOURNAL_SCHEMA.into(),
        })
        .expect("header serializes")
            + "\n";
        out.write_all(header.as_bytes()).map_err(io)?;
        out.flush().map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            next_seq: 1,
            bytes: header.len() as u64,
        })
    }

    /// Reopens a journal, discarding everything after byte `len`, which must
    /// be a flushed boundary recorded by [`byte_len`](Self::byte_len).
    pub fn resume(path: &Path, len: u64, next_seq: u64) -> Result<Self, JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new().write(true).open(path).map_err(io)?;
        file.set_len(len).map_err(io)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            next_seq,
            bytes: len,
        })
    }

    pub fn append(&mut self, generation: u64, event: Event) -> Result<u64, JournalError> {
        let seq = self.next_seq;
        let record = EventRecord {
            seq,
            generation,
            timestamp: seq,
            event,
        };
        let line = serde_json::to_string(&record).expect("event serializes") + "\n";
        self.out
            .write_all(line.as_bytes())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.bytes += line.len() as u64;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn flush(&mut self) -> Result<(), JournalError> {
        self.out.flush().map_err(|source| JournalError::Io {
            path: self.path.clone(),
            source,
        })
    }

    /// Bytes written so far, header included.
    pub fn byte_len(&self) -> u64 {
        self.bytes
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses journal text. A final line without a trailing newline is a torn
/// write and is dropped; any other malformed line is an error.
pub fn parse_journal(text: &str) -> Result<Vec<EventRecord>, JournalError> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| JournalError::BadHeader("missing header line".into()))?;
    let header: Header =
        serde_json::from_str(header).map_err(|e| JournalError::BadHeader(e.to_string()))?;
    if header.schema != JOURNAL_SCHEMA {
        return Err(JournalError::BadHeader(format!(
            "schema '{}', expected '{JOURNAL_SCHEMA}'",
            header.schema
        )));
    }
    let mut records = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord =
            serde_json::from_str(line).map_err(|e| JournalError::BadRecord {
                line: index + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    check_sequence(&records)?;
    Ok(records)
}

pub fn check_sequence(records: &[EventRecord]) -> Result<(), JournalError> {
    for (i, r) in records.iter().enumerate() {
        let expected = i as u64 + 1;
        if r.seq != expected {
            return Err(JournalError::Gap {
                expected,
                found: r.seq,
            });
        }
    }
    Ok(())
}

pub fn read_journal(path: &Path) -> Result<Vec<EventRecord>, JournalError> {
    let text = fs::read_to_string(path).map_err(|source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_journal(&text)
}

pub fn journal_path(run_dir: &Path) -> PathBuf {
    run_dir.join(JOURNAL_FILE)
}
