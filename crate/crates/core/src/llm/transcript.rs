//! Request/response transcripts for record and replay.
//!
//! File layout: one header line `{"schema":"shinka-transcript/1"}` followed
//! by one JSON record per provider call.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ProviderError;

pub const TRANSCRIPT_SCHEMA: &str = "shinka-transcript/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub fingerprint: String,
    pub model: String,
    pub temperature: f64,
    pub response: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

fn io_err(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Transcript(e.to_string())
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, ProviderError> {
    let file = File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| io_err("transcript is empty"))?
        .map_err(io_err)?;
    let header: Header = serde_json::from_str(&header).map_err(io_err)?;
    if header.schema != TRANSCRIPT_SCHEMA {
        return Err(io_err(format!("unsupported schema '{}'", header.schema)));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| io_err(format!("record {i}: {e}")))?,
        );
    }
    Ok(records)
}

/// Appends records to a transcript file, one flushed line per call.
#[derive(Debug)]
pub struct TranscriptRecorder {
    path: PathBuf,
    file: Mutex<(File, u64)>,
}

impl TranscriptRecorder {
    pub fn create(path: &Path) -> Result<Self, ProviderError> {
        let mut file = File::create(path).map_err(io_err)?;
        let header = serde_json::to_string(&Header {
            schema: TRANSCRIPT_SCHEMA.into(),
        })
        .expect("header serializes");
        writeln!(file, "{header}").map_err(io_err)?;
        let len = header.len() as u64 + 1;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new((file, len)),
        })
    }

    /// Reopens an existing transcript, discarding anything past `len` bytes.
    pub fn resume(path: &Path, len: u64) -> Result<Self, ProviderError> {
        let file = OpenOptions::new().write(true).open(path).map_err(io_err)?;
        file.set_len(len).map_err(io_err)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new((file, len)),
        })
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), ProviderError> {
        let line = serde_json::to_string(record).expect("record serializes");
        let mut guard = self.file.lock().expect("transcript lock");
        writeln!(guard.0, "{line}").map_err(io_err)?;
        guard.0.flush().map_err(io_err)?;
        guard.1 += line.len() as u64 + 1;
        Ok(())
    }

    pub fn byte_len(&self) -> u64 {
        self.file.lock().expect("transcript lock").1
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Recorded responses indexed by fingerprint. The n-th request with a
/// given fingerprint receives the n-th recorded response; once those run
/// out the last one repeats.
#[derive(Debug)]
pub struct TranscriptStore {
    responses: BTreeMap<String, Vec<String>>,
    consumed: Mutex<BTreeMap<String, usize>>,
}

impl TranscriptStore {
    pub fn new(records: Vec<TranscriptRecord>) -> Self {
        let mut responses: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            responses.entry(r.fingerprint).or_default().push(r.response);
        }
        Self {
            responses,
            consumed: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn lookup(&self, fingerprint: &str) -> Result<String, ProviderError> {
        let list = self
            .responses
            .get(fingerprint)
            .ok_or_else(|| ProviderError::ReplayMiss {
                fingerprint: fingerprint.to_string(),
            })?;
        let mut consumed = self.consumed.lock().expect("replay lock");
        let n = consumed.entry(fingerprint.to_string()).or_insert(0);
        let response = list[(*n).min(list.len() - 1)].clone();
        *n += 1;
        Ok(response)
    }

    pub fn cursor(&self) -> BTreeMap<String, usize> {
        self.consumed.lock().expect("replay lock").clone()
    }

    pub fn restore_cursor(&self, cursor: BTreeMap<String, usize>) {
        *self.consumed.lock().expect("replay lock") = cursor;
    }

    pub fn len(&self) -> usize {
        self.responses.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

pub enum TranscriptMode {
    /// Providers are called; nothing is written.
    Live,
    /// Providers are called and every exchange is appended to the file.
    Record(TranscriptRecorder),
    /// Providers are never called; responses come from the store.
    Replay {
        store: TranscriptStore,
        /// Replay runs still write their own transcript so they can be resumed and diffed.
        recorder: Option<TranscriptRecorder>,
    },
}

impl TranscriptMode {
    pub fn name(&self) -> &'static str {
        match self {
            TranscriptMode::Live => "live",
            TranscriptMode::Record(_) => "record",
            TranscriptMode::Replay { .. } => "replay",
        }
    }

    pub fn recorder(&self) -> Option<&TranscriptRecorder> {
        match self {
            TranscriptMode::Live => None,
            TranscriptMode::Record(r) => Some(r),
            TranscriptMode::Replay { recorder, .. } => recorder.as_ref(),
        }
    }
}

/// Copies a transcript file, used when a replay source lives inside a run dir.
pub fn copy_transcript(from: &Path, to: &Path) -> Result<(), ProviderError> {
    fs::copy(from, to).map(|_| ()).map_err(io_err)
}
