//! Bounded-parallel evaluation of candidate programs.
//!
//! Each job runs the evaluation command as a child process:
//! `<command...> --program_path <p> --results_dir <d>`. The command writes
//! `metrics.json` into the results directory:
//!
//! ```text
//! {"combined_score": 1.5, "public": {...}, "private": {...},
//!  "extra_data": null, "text_feedback": ""}
//! ```
//!
//! Candidate code never runs inside this process.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

pub const RESULT_SCHEMA: &str = "shinka-result/1";
pub const RESULT_FILE: &str = "metrics.json";

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub combined_score: f64,
    #[serde(default)]
    pub public: BTreeMap<String, f64>,
    #[serde(default)]
    pub private: BTreeMap<String, f64>,
    #[serde(default)]
    pub extra_data: Option<String>,
    #[serde(default)]
    pub text_feedback: String,
}

impl ResultFile {
    pub fn new(combined_score: f64) -> Self {
        Self {
            schema: Some(RESULT_SCHEMA.into()),
            combined_score,
            public: BTreeMap::new(),
            private: BTreeMap::new(),
            extra_data: None,
            text_feedback: String::new(),
        }
    }

    pub fn write(&self, results_dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(results_dir)?;
        let text = serde_json::to_string_pretty(self).expect("result serializes");
        fs::write(results_dir.join(RESULT_FILE), text + "\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationJob {
    pub job_id: u64,
    pub program_path: PathBuf,
    pub results_dir: PathBuf,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub combined_score: f64,
    pub public_metrics: BTreeMap<String, f64>,
    pub private_metrics: BTreeMap<String, f64>,
    pub text_feedback: String,
    pub extra_data_path: Option<PathBuf>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Spawn,
    Timeout,
    NonZeroExit,
    MissingResults,
    InvalidResults,
    NonFiniteScore,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Spawn => "spawn",
            FailureKind::Timeout => "timeout",
            FailureKind::NonZeroExit => "nonzero_exit",
            FailureKind::MissingResults => "missing_results",
            FailureKind::InvalidResults => "invalid_results",
            FailureKind::NonFiniteScore => "non_finite_score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("evaluation failed ({}): {message}", kind.as_str())]
pub struct EvalFailure {
    pub kind: FailureKind,
    pub message: String,
    /// Captured stderr (or stdout when stderr is empty), for the failure journal.
    pub output: String,
    pub runtime_seconds: f64,
}

/// Reads and validates `metrics.json` from a results directory.
pub fn collect(results_dir: &Path, runtime_seconds: f64) -> Result<EvaluationResult, EvalFailure> {
    let path = results_dir.join(RESULT_FILE);
    let fail = |kind, message: String| EvalFailure {
        kind,
        message,
        output: String::new(),
        runtime_seconds,
    };
    let text = fs::read_to_string(&path).map_err(|e| {
        fail(
            FailureKind::MissingResults,
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    let file: ResultFile = serde_json::from_str(&text)
        .map_err(|e| fail(FailureKind::InvalidResults, format!("{}: {e}", path.display())))?;
    if let Some(schema) = &file.schema {
        if schema != RESULT_SCHEMA {
            return Err(fail(
                FailureKind::InvalidResults,
                format!("unsupported result schema '{schema}'"),
            ));
        }
    }
    if !file.combined_score.is_finite() {
        return Err(fail(
            FailureKind::NonFiniteScore,
            format!("combined_score is {}", file.combined_score),
        ));
    }
    Ok(EvaluationResult {
        combined_score: file.combined_score,
        public_metrics: file.public,
        private_metrics: file.private,
        text_feedback: file.text_feedback,
        extra_data_path: file.extra_data.map(|p| results_dir.join(p)),
        runtime_seconds,
    })
}

pub trait JobRunner: Send + Sync {
    fn run(&self, job: &EvaluationJob) -> Result<EvaluationResult, EvalFailure>;
}

/// Runs the evaluation command in a child process.
pub struct SubprocessRunner {
    command: Vec<String>,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl SubprocessRunner {
    pub fn new(command: Vec<String>) -> Self {
        assert!(!command.is_empty(), "evaluation command must not be empty");
        Self {
            command,
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    /// Largest number of child processes alive at the same time.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn spawn_and_wait(&self, job: &EvaluationJob, started: Instant) -> Result<(), EvalFailure> {
        let log_dir = job
            .results_dir
            .parent()
            .unwrap_or(&job.results_dir)
            .to_path_buf();
        let stdout_path = log_dir.join("stdout.log");
        let stderr_path = log_dir.join("stderr.log");
        let spawn_fail = |message: String| EvalFailure {
            kind: FailureKind::Spawn,
            message,
            output: String::new(),
            runtime_seconds: started.elapsed().as_secs_f64(),
        };
        fs::create_dir_all(&job.results_dir)
            .map_err(|e| spawn_fail(format!("cannot create {}: {e}", job.results_dir.display())))?;
        let stdout = File::create(&stdout_path).map_err(|e| spawn_fail(e.to_string()))?;
        let stderr = File::create(&stderr_path).map_err(|e| spawn_fail(e.to_string()))?;

        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg("--program_path")
            .arg(&job.program_path)
            .arg("--results_dir")
            .arg(&job.results_dir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(|e| spawn_fail(format!("cannot start '{}': {e}", self.command[0])))?;

        let captured = || {
            let err = fs::read_to_string(&stderr_path).unwrap_or_default();
            if err.trim().is_empty() {
                fs::read_to_string(&stdout_path).unwrap_or_default()
            } else {
                err
            }
        };
        let timeout = Duration::from_secs_f64(job.timeout_secs.max(0.0));
        let status = child.wait_timeout(timeout).map_err(|e| spawn_fail(e.to_string()))?;
        match status {
            None => {
                let _ = child.kill();
                let _ = child.wait();
                Err(EvalFailure {
                    kind: FailureKind::Timeout,
                    message: format!("no result after {}s", job.timeout_secs),
                    output: captured(),
                    runtime_seconds: started.elapsed().as_secs_f64(),
                })
            }
            Some(status) if !status.success() => Err(EvalFailure {
                kind: FailureKind::NonZeroExit,
                message: format!("evaluator exited with {status}"),
                output: captured(),
                runtime_seconds: started.elapsed().as_secs_f64(),
            }),
            Some(_) => Ok(()),
        }
    }
}

impl JobRunner for SubprocessRunner {
    fn run(&self, job: &EvaluationJob) -> Result<EvaluationResult, EvalFailure> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        let started = Instant::now();
        let outcome = self.spawn_and_wait(job, started);
        self.active.fetch_sub(1, Ordering::SeqCst);
        outcome?;
        collect(&job.results_dir, started.elapsed().as_secs_f64())
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub job: EvaluationJob,
    pub outcome: Result<EvaluationResult, EvalFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerCounts {
    pub submitted: u64,
    pub queued: u64,
    pub running: u64,
    /// Finished and waiting to be handed to the coordinator.
    pub finished: u64,
    pub done: u64,
    pub failed: u64,
}

/// Worker pool with at most `max_parallel` jobs running.
///
/// Results are handed out either in submission order ([`next_in_order`])
/// or as they finish ([`next_finished`]).
///
/// [`next_in_order`]: Scheduler::next_in_order
/// [`next_finished`]: Scheduler::next_finished
pub struct Scheduler {
    runner: Arc<dyn JobRunner>,
    max_parallel: usize,
    queue: VecDeque<EvaluationJob>,
    order: VecDeque<u64>,
    finished: BTreeMap<u64, Completion>,
    running: usize,
    peak_running: usize,
    counts: SchedulerCounts,
    tx: Sender<Completion>,
    rx: Receiver<Completion>,
}

impl Scheduler {
    pub fn new(runner: Arc<dyn JobRunner>, max_parallel: usize) -> Self {
        let (tx, rx) = mpsc::channel();
        Self {
            runner,
            max_parallel: max_parallel.max(1),
            queue: VecDeque::new(),
            order: VecDeque::new(),
            finished: BTreeMap::new(),
            running: 0,
            peak_running: 0,
            counts: SchedulerCounts::default(),
            tx,
            rx,
        }
    }

    pub fn submit(&mut self, job: EvaluationJob) -> JobState {
        self.counts.submitted += 1;
        self.order.push_back(job.job_id);
        self.queue.push_back(job);
        self.start_pending();
        if self.queue.is_empty() {
            JobState::Running
        } else {
            JobState::Queued
        }
    }

    fn start_pending(&mut self) {
        while self.running < self.max_parallel {
            let Some(job) = self.queue.pop_front() else {
                break;
            };
            self.running += 1;
            self.peak_running = self.peak_running.max(self.running);
            let runner = Arc::clone(&self.runner);
            let tx = self.tx.clone();
            thread::spawn(move || {
                let outcome = runner.run(&job);
                let _ = tx.send(Completion { job, outcome });
            });
        }
    }

    fn absorb(&mut self, completion: Completion) {
        self.running -= 1;
        self.finished.insert(completion.job.job_id, completion);
        self.start_pending();
    }

    fn absorb_ready(&mut self) {
        while let Ok(c) = self.rx.try_recv() {
            self.absorb(c);
        }
    }

    fn hand_out(&mut self, id: u64) -> Completion {
        let c = self.finished.remove(&id).expect("finished job present");
        self.order.retain(|j| *j != id);
        if c.outcome.is_ok() {
            self.counts.done += 1;
        } else {
            self.counts.failed += 1;
        }
        c
    }

    /// Jobs submitted but not yet handed out.
    pub fn in_flight(&self) -> usize {
        self.order.len()
    }

    pub fn running(&self) -> usize {
        self.running
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn peak_running(&self) -> usize {
        self.peak_running
    }

    pub fn counts(&self) -> SchedulerCounts {
        SchedulerCounts {
            queued: self.queue.len() as u64,
            running: self.running as u64,
            finished: self.finished.len() as u64,
            ..self.counts
        }
    }

    /// Blocks for the oldest outstanding job. `None` when nothing is in flight.
    pub fn next_in_order(&mut self) -> Option<Completion> {
        let id = *self.order.front()?;
        while !self.finished.contains_key(&id) {
            let c = self.rx.recv().expect("scheduler keeps a sender");
            self.absorb(c);
        }
        Some(self.hand_out(id))
    }

    /// Returns some finished job, blocking only when `block` is set and
    /// none has finished yet.
    pub fn next_finished(&mut self, block: bool) -> Option<Completion> {
        self.absorb_ready();
        if self.finished.is_empty() {
            if !block || self.order.is_empty() {
                return None;
            }
            let c = self.rx.recv().expect("scheduler keeps a sender");
            self.absorb(c);
        }
        let id = *self.finished.keys().next()?;
        Some(self.hand_out(id))
    }
}
