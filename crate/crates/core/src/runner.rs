//! The evolution loop.
//!
//! One coordinator owns the archive, the bandit and the journal. Each
//! generation it folds finished evaluations into the archive, migrates and
//! refreshes the scratchpad on their intervals, then makes exactly one
//! proposal attempt: sample a context, a patch type and a model, query the
//! model with parse feedback, filter near-duplicates and queue the
//! candidate for evaluation. State is checkpointed after every generation.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/
//!   checkpoint.json  journal.jsonl  archive.jsonl  transcripts.jsonl
//!   replay_source.jsonl (replay runs)  scratchpad_<gen>.md
//!   gen_<n>/main.<ext>  gen_<n>/results/metrics.json  gen_<n>/std{out,err}.log
//!   report.json  trajectory.csv  tree.json  bandit_history.csv  best_program.<ext>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, MutationContext, PatchType, ProgramRecord};
use crate::bandit::{transform_reward, BanditError, BanditState};
use crate::config::{CollectionOrder, ConfigError, DynamicSelection, Preset, RunConfig};
use crate::journal::{
    journal_path, BanditUpdateEvent, EvalDoneEvent, EvalFailEvent, EvalStartEvent, Event,
    InsertEvent, JournalError, JournalWriter, MetaRefreshEvent, MigrationEvent,
    NoveltyRejectEvent, ProposalEvent, ProposalOutcome, RetryEvent, RunStart,
};
use crate::llm::mock::Tripwire;
use crate::llm::transcript::{copy_transcript, TranscriptRecorder, TranscriptStore};
use crate::llm::{
    sample_model, EndpointKind, Gateway, ModelSelector, ModelSpec, ProviderError, TranscriptMode,
};
use crate::mutation::blocks::parse_blocks;
use crate::mutation::prompt::{build_prompt, PromptSettings, TemplateSet};
use crate::mutation::{propose_with_retries, sample_patch_type, AttemptErrorKind, AttemptLog};
use crate::novelty::{
    check_novelty, embed_mutable, judge_prompt, NoveltyError, NoveltyMode, NoveltyVerdict,
};
use crate::report::{extension_for, replay_run_dir, write_report, ReportError, RunReport};
use crate::sampling::{select_parent, SelectionKind, SelectionStrategy};
use crate::scheduler::{
    Completion, EvalFailure, EvaluationJob, JobRunner, Scheduler, SubprocessRunner,
};
use crate::scratchpad::{
    meta_prompt, parse_meta_response, refresh_due, render, select_window, Scratchpad,
};

pub const CHECKPOINT_SCHEMA: &str = "shinka-checkpoint/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";
pub const REPLAY_SOURCE_FILE: &str = "replay_source.jsonl";
pub const INITIAL_ID: &str = "init-0";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial program rejected: {0}")]
    InitialProgram(String),
    #[error("initial program evaluation failed: {0}")]
    InitialEvaluation(EvalFailure),
    #[error("run directory {0} already holds a run; resume it or choose another directory")]
    RunDirExists(PathBuf),
    #[error("no checkpoint in {0}")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint unreadable: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Novelty(#[from] NoveltyError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl RunError {
    /// Errors caused by the configuration rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RunError::Config(_) | RunError::InitialProgram(_) | RunError::RunDirExists(_)
        )
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Provider errors that must stop the run instead of failing one attempt.
fn is_fatal(e: &ProviderError) -> bool {
    matches!(
        e,
        ProviderError::ReplayMiss { .. }
            | ProviderError::Tripwire(_)
            | ProviderError::Transcript(_)
            | ProviderError::UnknownModel(_)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub generation: u64,
    pub num_generations: u64,
    pub best_fitness: Option<f64>,
    pub archive_size: usize,
}

pub type ProgressFn = Arc<dyn Fn(&Progress) + Send + Sync>;

#[derive(Clone, Default)]
pub struct RunOptions {
    pub run_dir: PathBuf,
    pub initial_program: String,
    /// Transcript whose responses replace every provider call.
    pub replay: Option<PathBuf>,
    pub preset: Option<Preset>,
    /// Replaces the subprocess evaluator built from `[evaluation]`.
    pub runner: Option<Arc<dyn JobRunner>>,
    /// Stop after checkpointing this generation, as if the process died.
    pub stop_after: Option<u64>,
    pub progress: Option<ProgressFn>,
}

#[derive(Clone, Default)]
pub struct ResumeOptions {
    pub runner: Option<Arc<dyn JobRunner>>,
    pub stop_after: Option<u64>,
    pub progress: Option<ProgressFn>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub completed: bool,
    pub generation: u64,
    pub report: RunReport,
    /// Most evaluations observed running at once.
    pub peak_running: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingJob {
    job: EvaluationJob,
    /// The record to archive; fitness and metrics are filled on completion.
    draft: ProgramRecord,
    arm: usize,
    parent_fitness: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    schema: String,
    config: RunConfig,
    preset: Option<String>,
    generation: u64,
    completed: bool,
    archive: Archive,
    bandit: Option<BanditState>,
    rng: ChaCha8Rng,
    scratchpad: Scratchpad,
    meta_recent: Vec<String>,
    pending: Vec<PendingJob>,
    next_job_id: u64,
    clock: u64,
    collected: u64,
    initial_fitness: f64,
    journal_len: u64,
    journal_next_seq: u64,
    replay: bool,
    transcript_len: u64,
    replay_cursor: Option<BTreeMap<String, usize>>,
}

fn build_gateway(config: &RunConfig, transcript: TranscriptMode) -> Result<Gateway, RunError> {
    let replay = matches!(transcript, TranscriptMode::Replay { .. });
    let mut gateway = Gateway::new(transcript, config.models.retry);
    let chat_spec = |name: &str, temperatures: Vec<f64>| ModelSpec {
        name: name.to_string(),
        endpoint_kind: EndpointKind::Chat,
        temperatures,
        max_tokens: config.models.max_tokens,
    };
    let chat_provider = |name: &str| -> Result<Arc<dyn crate::llm::ChatProvider>, RunError> {
        if replay {
            return Ok(Arc::new(Tripwire(name.to_string())));
        }
        config
            .models
            .providers
            .get(name)
            .and_then(|p| p.build_chat(name))
            .ok_or_else(|| {
                ConfigError::Invalid(format!("model '{name}' has no chat provider")).into()
            })
    };
    let mut auxiliary: Vec<&String> = Vec::new();
    auxiliary.extend(&config.models.meta_model);
    auxiliary.extend(&config.models.novelty_judge_model);
    for name in auxiliary {
        gateway.register_chat(chat_spec(name, vec![0.0]), chat_provider(name)?);
    }
    for spec in config.model_pool() {
        let provider = chat_provider(&spec.name)?;
        gateway.register_chat(spec, provider);
    }
    if let Some(name) = &config.evolution.embedding_model {
        if config.evolution.novelty_mode != NoveltyMode::Off {
            let provider: Arc<dyn crate::llm::EmbeddingProvider> = if replay {
                Arc::new(Tripwire(name.clone()))
            } else {
                config
                    .models
                    .providers
                    .get(name)
                    .and_then(|p| p.build_embedding(name))
                    .ok_or_else(|| {
                        ConfigError::Invalid(format!("model '{name}' has no embedding provider"))
                    })?
            };
            gateway.register_embedding(name, provider);
        }
    }
    Ok(gateway)
}

fn templates_for(config: &RunConfig) -> Result<TemplateSet, RunError> {
    match &config.task.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| {
            ConfigError::Invalid(format!("templates_dir {}: {e}", dir.display())).into()
        }),
        None => Ok(TemplateSet::default()),
    }
}

pub struct Engine {
    run_dir: PathBuf,
    config: RunConfig,
    preset: Option<String>,
    strategy: SelectionStrategy,
    pool: Vec<ModelSpec>,
    templates: TemplateSet,
    settings: PromptSettings,
    archive: Archive,
    bandit: Option<BanditState>,
    rng: ChaCha8Rng,
    scratchpad: Scratchpad,
    meta_recent: Vec<String>,
    gateway: Gateway,
    scheduler: Scheduler,
    journal: JournalWriter,
    pending: BTreeMap<u64, PendingJob>,
    generation: u64,
    completed: bool,
    next_job_id: u64,
    clock: u64,
    collected: u64,
    initial_fitness: f64,
    stop_after: Option<u64>,
    progress: Option<ProgressFn>,
}

impl Engine {
    /// Prepares a fresh run: validates the config, opens the run directory
    /// and evaluates the initial program into every island.
    pub fn start(mut config: RunConfig, options: RunOptions) -> Result<Self, RunError> {
        let overrides = options.preset.map(|p| p.overrides());
        if let Some(o) = &overrides {
            config.apply_overrides(o);
        }
        config.validate()?;
        parse_blocks(&options.initial_program)
            .map_err(|e| RunError::InitialProgram(e.to_string()))?;
        let templates = templates_for(&config)?;

        let run_dir = options.run_dir.clone();
        if run_dir.join(CHECKPOINT_FILE).exists() || journal_path(&run_dir).exists() {
            return Err(RunError::RunDirExists(run_dir));
        }
        fs::create_dir_all(&run_dir).map_err(io_err(format!("creating {}", run_dir.display())))?;

        let recorder = TranscriptRecorder::create(&run_dir.join(TRANSCRIPT_FILE))?;
        let transcript = match &options.replay {
            Some(source) => {
                let local = run_dir.join(REPLAY_SOURCE_FILE);
                copy_transcript(source, &local)?;
                TranscriptMode::Replay {
                    store: TranscriptStore::load(&local)?,
                    recorder: Some(recorder),
                }
            }
            None => TranscriptMode::Record(recorder),
        };
        let gateway = build_gateway(&config, transcript)?;
        let runner = options.runner.clone().unwrap_or_else(|| {
            Arc::new(SubprocessRunner::new(config.evaluation.command.clone()))
        });
        let scheduler = Scheduler::new(runner, config.evolution.max_parallel_jobs);
        let mut journal = JournalWriter::create(&journal_path(&run_dir))?;
        journal.append(
            0,
            Event::RunStart(Box::new(RunStart {
                preset: options.preset.map(|p| p.as_str().to_string()),
                overrides,
                config_hash: config.hash(),
                seed: config.seed,
                config: config.clone(),
            })),
        )?;

        let bandit = (config.evolution.llm_dynamic_selection == DynamicSelection::Ucb1).then(|| {
            BanditState::new(
                config.models.llm_models.clone(),
                config.evolution.exploration_coefficient,
            )
        });
        let mut engine = Self {
            strategy: config.strategy()?,
            pool: config.model_pool(),
            settings: PromptSettings {
                language: config.task.language.clone(),
                task_description: config.task.task_description.clone(),
            },
            archive: Archive::new(config.archive_params())?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            preset: options.preset.map(|p| p.as_str().to_string()),
            templates,
            bandit,
            scratchpad: Scratchpad::default(),
            meta_recent: Vec::new(),
            gateway,
            scheduler,
            journal,
            pending: BTreeMap::new(),
            generation: 0,
            completed: false,
            next_job_id: 0,
            clock: 0,
            collected: 0,
            initial_fitness: 0.0,
            stop_after: options.stop_after,
            progress: options.progress,
            run_dir,
            config,
        };
        engine.seed(&options.initial_program)?;
        Ok(engine)
    }

    /// Restores a run from its last checkpoint.
    pub fn resume(run_dir: &Path, options: ResumeOptions) -> Result<Self, RunError> {
        let path = run_dir.join(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(RunError::MissingCheckpoint(run_dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
        let cp: Checkpoint =
            serde_json::from_str(&text).map_err(|e| RunError::Checkpoint(e.to_string()))?;
        if cp.schema != CHECKPOINT_SCHEMA {
            return Err(RunError::Checkpoint(format!(
                "schema '{}', expected '{CHECKPOINT_SCHEMA}'",
                cp.schema
            )));
        }
        let config = cp.config;
        let templates = templates_for(&config)?;
        let journal = JournalWriter::resume(&journal_path(run_dir), cp.journal_len, cp.journal_next_seq)?;
        let recorder = TranscriptRecorder::resume(&run_dir.join(TRANSCRIPT_FILE), cp.transcript_len)?;
        let transcript = if cp.replay {
            let store = TranscriptStore::load(&run_dir.join(REPLAY_SOURCE_FILE))?;
            store.restore_cursor(cp.replay_cursor.unwrap_or_default());
            TranscriptMode::Replay {
                store,
                recorder: Some(recorder),
            }
        } else {
            TranscriptMode::Record(recorder)
        };
        let gateway = build_gateway(&config, transcript)?;
        let runner = options.runner.clone().unwrap_or_else(|| {
            Arc::new(SubprocessRunner::new(config.evaluation.command.clone()))
        });
        let mut scheduler = Scheduler::new(runner, config.evolution.max_parallel_jobs);
        let mut pending = BTreeMap::new();
        for p in cp.pending {
            scheduler.submit(p.job.clone());
            pending.insert(p.job.job_id, p);
        }
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            strategy: config.strategy()?,
            pool: config.model_pool(),
            settings: PromptSettings {
                language: config.task.language.clone(),
                task_description: config.task.task_description.clone(),
            },
            preset: cp.preset,
            templates,
            archive: cp.archive,
            bandit: cp.bandit,
            rng: cp.rng,
            scratchpad: cp.scratchpad,
            meta_recent: cp.meta_recent,
            gateway,
            scheduler,
            journal,
            pending,
            generation: cp.generation,
            completed: cp.completed,
            next_job_id: cp.next_job_id,
            clock: cp.clock,
            collected: cp.collected,
            initial_fitness: cp.initial_fitness,
            stop_after: options.stop_after,
            progress: options.progress,
            config,
        })
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn bandit(&self) -> Option<&BanditState> {
        self.bandit.as_ref()
    }

    pub fn scratchpad(&self) -> &Scratchpad {
        &self.scratchpad
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn preset(&self) -> Option<&str> {
        self.preset.as_deref()
    }

    fn program_file(&self) -> String {
        format!("main.{}", extension_for(&self.config.task.language))
    }

    fn tick(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    fn log(&mut self, generation: u64, event: Event) -> Result<(), RunError> {
        self.journal.append(generation, event)?;
        Ok(())
    }

    /// Writes a candidate into `gen_<n>/` and queues it.
    fn submit(&mut self, generation: u64, code: &str) -> Result<(EvaluationJob, String), RunError> {
        let dir = self.run_dir.join(format!("gen_{generation}"));
        fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let rel = format!("gen_{generation}/{}", self.program_file());
        let program_path = self.run_dir.join(&rel);
        fs::write(&program_path, code).map_err(io_err(format!("writing {}", program_path.display())))?;
        let results_dir = dir.join("results");
        if results_dir.exists() {
            fs::remove_dir_all(&results_dir)
                .map_err(io_err(format!("clearing {}", results_dir.display())))?;
        }
        let job = EvaluationJob {
            job_id: self.next_job_id,
            program_path,
            results_dir,
            timeout_secs: self.config.evaluation.timeout_secs,
        };
        self.next_job_id += 1;
        self.scheduler.submit(job.clone());
        Ok((job, rel))
    }

    fn seed(&mut self, code: &str) -> Result<(), RunError> {
        let (job, rel) = self.submit(0, code)?;
        self.log(
            0,
            Event::EvalStart(EvalStartEvent {
                job_id: job.job_id,
                program_id: INITIAL_ID.into(),
                program_path: rel,
                in_flight: self.scheduler.in_flight(),
            }),
        )?;
        let completion = self.scheduler.next_in_order().expect("seed job in flight");
        self.collected += 1;
        let result = match completion.outcome {
            Ok(r) => r,
            Err(f) => {
                self.log(
                    0,
                    Event::EvalFail(EvalFailEvent {
                        job_id: job.job_id,
                        program_id: INITIAL_ID.into(),
                        kind: f.kind,
                        message: f.message.clone(),
                        output: f.output.clone(),
                    }),
                )?;
                self.journal.flush()?;
                return Err(RunError::InitialEvaluation(f));
            }
        };
        self.log(
            0,
            Event::EvalDone(EvalDoneEvent {
                job_id: job.job_id,
                program_id: INITIAL_ID.into(),
                combined_score: result.combined_score,
                public_metrics: result.public_metrics.clone(),
                private_metrics: result.private_metrics.clone(),
                text_feedback: result.text_feedback.clone(),
            }),
        )?;
        self.initial_fitness = result.combined_score;
        let mutable_code = parse_blocks(code)
            .map_err(|e| RunError::InitialProgram(e.to_string()))?
            .mutable_code();
        let embedding = self.embed(code)?;
        for island in 0..self.config.database.num_islands {
            let record = ProgramRecord {
                id: format!("init-{island}"),
                parent_id: None,
                crossover_partner_id: None,
                island_id: island,
                generation: 0,
                code: code.to_string(),
                mutable_code: mutable_code.clone(),
                fitness: result.combined_score,
                public_metrics: result.public_metrics.clone(),
                text_feedback: result.text_feedback.clone(),
                offspring_count: 0,
                embedding: embedding.clone(),
                model_name: "initial".into(),
                patch_type: PatchType::Init,
                created_at: self.tick(),
            };
            let outcome = self.archive.insert(record.clone())?;
            self.log(
                0,
                Event::Insert(Box::new(InsertEvent {
                    record,
                    evicted: outcome.evicted,
                })),
            )?;
        }
        self.checkpoint()?;
        self.report_progress();
        Ok(())
    }

    fn embed(&self, code: &str) -> Result<Option<Vec<f64>>, RunError> {
        if self.config.evolution.novelty_mode == NoveltyMode::Off {
            return Ok(None);
        }
        let model = self
            .config
            .evolution
            .embedding_model
            .as_deref()
            .expect("validated: novelty needs an embedding model");
        Ok(Some(embed_mutable(code, &self.gateway, model)?))
    }

    fn model_probabilities(&self) -> Vec<f64> {
        match &self.bandit {
            Some(b) => b.probabilities(),
            None => vec![1.0 / self.pool.len() as f64; self.pool.len()],
        }
    }

    fn bandit_update(
        &mut self,
        generation: u64,
        arm: usize,
        program_id: Option<String>,
        fitness: Option<f64>,
        transformed: f64,
    ) -> Result<(), RunError> {
        let Some(bandit) = self.bandit.as_mut() else {
            return Ok(());
        };
        let normalized = bandit.update(arm, transformed)?;
        let stats = bandit.arms[arm].clone();
        self.log(
            generation,
            Event::BanditUpdate(BanditUpdateEvent {
                arm,
                model: stats.name,
                program_id,
                fitness,
                transformed_reward: transformed,
                normalized_reward: normalized,
                visits: stats.visits,
                mean_reward: stats.mean_reward,
            }),
        )
    }

    /// Folds one finished evaluation into the archive and the bandit.
    fn absorb(&mut self, generation: u64, completion: Completion) -> Result<(), RunError> {
        let job_id = completion.job.job_id;
        let Some(pending) = self.pending.remove(&job_id) else {
            return Ok(());
        };
        self.collected += 1;
        let id = pending.draft.id.clone();
        match completion.outcome {
            Ok(result) => {
                self.log(
                    generation,
                    Event::EvalDone(EvalDoneEvent {
                        job_id,
                        program_id: id.clone(),
                        combined_score: result.combined_score,
                        public_metrics: result.public_metrics.clone(),
                        private_metrics: result.private_metrics.clone(),
                        text_feedback: result.text_feedback.clone(),
                    }),
                )?;
                let mut record = pending.draft;
                record.fitness = result.combined_score;
                record.public_metrics = result.public_metrics;
                record.text_feedback = result.text_feedback;
                let outcome = self.archive.insert(record.clone())?;
                self.log(
                    generation,
                    Event::Insert(Box::new(InsertEvent {
                        record,
                        evicted: outcome.evicted,
                    })),
                )?;
                self.meta_recent.push(id.clone());
                let reward = transform_reward(
                    result.combined_score,
                    pending.parent_fitness,
                    self.initial_fitness,
                );
                self.bandit_update(generation, pending.arm, Some(id), Some(result.combined_score), reward)
            }
            Err(f) => {
                self.log(
                    generation,
                    Event::EvalFail(EvalFailEvent {
                        job_id,
                        program_id: id.clone(),
                        kind: f.kind,
                        message: f.message,
                        output: f.output,
                    }),
                )?;
                self.bandit_update(generation, pending.arm, Some(id), None, 0.0)
            }
        }
    }

    fn collect(&mut self, generation: u64) -> Result<(), RunError> {
        let limit = self.config.evolution.max_parallel_jobs;
        match self.config.evolution.collection_order {
            CollectionOrder::Submission => {
                while self.scheduler.in_flight() >= limit {
                    let c = self.scheduler.next_in_order().expect("jobs in flight");
                    self.absorb(generation, c)?;
                }
            }
            CollectionOrder::Completion => {
                while let Some(c) = self.scheduler.next_finished(false) {
                    self.absorb(generation, c)?;
                }
                while self.scheduler.in_flight() >= limit {
                    let c = self.scheduler.next_finished(true).expect("jobs in flight");
                    self.absorb(generation, c)?;
                }
            }
        }
        Ok(())
    }

    fn drain(&mut self, generation: u64) -> Result<(), RunError> {
        loop {
            let next = match self.config.evolution.collection_order {
                CollectionOrder::Submission => self.scheduler.next_in_order(),
                CollectionOrder::Completion => self.scheduler.next_finished(true),
            };
            match next {
                Some(c) => self.absorb(generation, c)?,
                None => return Ok(()),
            }
        }
    }

    fn migrate(&mut self, generation: u64) -> Result<(), RunError> {
        let db = &self.config.database;
        let moves = self
            .archive
            .migrate(generation, db.migration_interval, db.migration_rate, &mut self.rng);
        if !moves.is_empty() {
            self.log(generation, Event::Migration(MigrationEvent { moves }))?;
        }
        Ok(())
    }

    fn refresh_scratchpad(&mut self, generation: u64) -> Result<(), RunError> {
        let Some(meta_model) = self.config.models.meta_model.clone() else {
            return Ok(());
        };
        if !refresh_due(generation, self.config.evolution.meta_rec_interval) {
            return Ok(());
        }
        let cap = self.config.evolution.max_meta_recommendations;
        let records: Vec<&ProgramRecord> = self.archive.records().collect();
        let window = select_window(&records, &self.meta_recent);
        let window_ids: Vec<String> = window.iter().map(|r| r.id.clone()).collect();
        let prompt = meta_prompt(
            &self.templates.meta,
            &self.settings.task_description,
            &self.settings.language,
            &window,
            &self.scratchpad,
            cap,
        );
        let parsed = match self.gateway.complete(&meta_model, 0.0, &prompt) {
            Ok(raw) => parse_meta_response(&raw, cap, generation).map_err(|e| e.to_string()),
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => Err(e.to_string()),
        };
        self.meta_recent.clear();
        let event = match parsed {
            Ok(pad) => {
                let path = self.run_dir.join(format!("scratchpad_{generation}.md"));
                fs::write(&path, pad.to_markdown())
                    .map_err(io_err(format!("writing {}", path.display())))?;
                let recommendations = pad.recommendations.clone();
                self.scratchpad = pad;
                MetaRefreshEvent {
                    applied: true,
                    window: window_ids,
                    recommendations,
                    error: None,
                }
            }
            Err(error) => {
                tracing::warn!(generation, %error, "meta refresh failed, keeping previous scratchpad");
                MetaRefreshEvent {
                    applied: false,
                    window: window_ids,
                    recommendations: self.scratchpad.recommendations.clone(),
                    error: Some(error),
                }
            }
        };
        self.log(generation, Event::MetaRefresh(event))
    }

    /// Crossover partner from the parent's island, excluding the parent.
    fn sample_partner(&mut self, ctx: &MutationContext) -> Result<Option<ProgramRecord>, RunError> {
        let members: Vec<&ProgramRecord> = self
            .archive
            .island_members(ctx.island_id)
            .into_iter()
            .filter(|m| m.id != ctx.parent.id)
            .collect();
        if members.is_empty() {
            return Ok(None);
        }
        let strategy = match self.strategy.kind {
            SelectionKind::BestOfN => SelectionStrategy {
                kind: SelectionKind::HillClimb,
                ..self.strategy
            },
            _ => self.strategy,
        };
        let id = select_parent(&members, None, &strategy, &mut self.rng)
            .map_err(ArchiveError::from)?;
        Ok(self.archive.get(&id).cloned())
    }

    fn log_attempts(&mut self, generation: u64, round: u32, model: &str, logs: Vec<AttemptLog>) -> Result<(), RunError> {
        for log in logs {
            let event = RetryEvent {
                round,
                model: model.to_string(),
                log,
            };
            let event = match event.log.kind {
                AttemptErrorKind::Parse => Event::ParseRetry(event),
                AttemptErrorKind::Patch => Event::PatchReject(event),
            };
            self.log(generation, event)?;
        }
        Ok(())
    }

    /// The generation's single proposal attempt.
    fn propose(&mut self, generation: u64) -> Result<(), RunError> {
        let completed_results = self.collected;
        let archive_size = self.archive.len();
        let evo = self.config.evolution.clone();
        let mut rounds = 0;
        let mut provider_calls = 0;
        let mut novelty_rejections = 0;
        let mut outcome = ProposalOutcome::PatchFailed;
        let mut provider_error = None;
        let mut summary: Option<ProposalEvent> = None;
        let mut eval_start: Option<EvalStartEvent> = None;

        for round in 1..=evo.max_patch_attempts {
            rounds = round;
            let ctx = self.archive.sample_context(
                &self.strategy,
                self.config.inspiration_counts(),
                &mut self.rng,
            )?;
            let mut patch_type = sample_patch_type(&evo.patch_types, &evo.patch_type_probs, &mut self.rng);
            let partner = if patch_type == PatchType::Cross {
                self.sample_partner(&ctx)?
            } else {
                None
            };
            if patch_type == PatchType::Cross && partner.is_none() {
                patch_type = PatchType::Full;
            }
            let model_probabilities = self.model_probabilities();
            let selector = match &self.bandit {
                Some(b) => ModelSelector::Bandit(b),
                None => ModelSelector::Uniform,
            };
            let (arm, spec, temperature) = sample_model(selector, &self.pool, &mut self.rng);
            let scratch = render(&self.scratchpad);
            let prompt = build_prompt(
                &ctx,
                patch_type,
                partner.as_ref(),
                Some(&scratch),
                &self.templates,
                &self.settings,
            );
            let mut fatal: Option<ProviderError> = None;
            let gateway = &self.gateway;
            let result = propose_with_retries(
                &ctx.parent.code,
                &prompt,
                patch_type,
                &spec.name,
                temperature,
                evo.max_patch_resamples,
                &mut |p| {
                    gateway.complete(&spec.name, temperature, p).inspect_err(|e| {
                        if is_fatal(e) {
                            fatal = Some(e.clone());
                        }
                    })
                },
            );
            if let Some(e) = fatal {
                return Err(e.into());
            }
            summary = Some(ProposalEvent {
                outcome,
                rounds,
                provider_calls,
                program_id: None,
                island_id: ctx.island_id,
                parent_id: ctx.parent.id.clone(),
                crossover_partner_id: partner.as_ref().map(|p| p.id.clone()),
                inspiration_ids: ctx
                    .top_k_inspirations
                    .iter()
                    .chain(&ctx.random_inspirations)
                    .map(|r| r.id.clone())
                    .collect(),
                patch_type,
                model: spec.name.clone(),
                temperature,
                completed_results,
                archive_size,
                model_probabilities,
                provider_error: None,
            });

            let success = match result {
                Ok(success) => success,
                Err(failure) => {
                    provider_calls += failure.provider_calls;
                    self.log_attempts(generation, round, &spec.name, failure.failed_attempts)?;
                    if failure.provider_error.is_some() {
                        provider_error = failure.provider_error;
                    }
                    outcome = ProposalOutcome::PatchFailed;
                    self.bandit_update(generation, arm, None, None, 0.0)?;
                    continue;
                }
            };
            provider_calls += success.provider_calls;
            self.log_attempts(generation, round, &spec.name, success.failed_attempts)?;

            let embedding = self.embed(&success.new_code)?;
            let verdict = match &embedding {
                None => NoveltyVerdict::disabled(),
                Some(candidate) => {
                    let members = self.archive.island_members(ctx.island_id);
                    let judge_model = self.config.models.novelty_judge_model.clone().unwrap_or_default();
                    let judge_template = self.templates.judge.clone();
                    let language = self.settings.language.clone();
                    let mut judge_fatal: Option<ProviderError> = None;
                    let new_code = success.new_code.clone();
                    let gateway = &self.gateway;
                    let verdict = check_novelty(
                        evo.novelty_mode,
                        candidate,
                        &members,
                        evo.code_embed_sim_threshold,
                        &mut |neighbor, similarity| {
                            let prompt = judge_prompt(
                                &judge_template,
                                &language,
                                &new_code,
                                &neighbor.code,
                                similarity,
                            );
                            gateway.complete(&judge_model, 0.0, &prompt).inspect_err(|e| {
                                if is_fatal(e) {
                                    judge_fatal = Some(e.clone());
                                }
                            })
                        },
                    )?;
                    if let Some(e) = judge_fatal {
                        return Err(e.into());
                    }
                    verdict
                }
            };
            if !verdict.decision.accepted() {
                self.log(
                    generation,
                    Event::NoveltyReject(NoveltyRejectEvent {
                        round,
                        parent_id: ctx.parent.id.clone(),
                        model: spec.name.clone(),
                        verdict,
                    }),
                )?;
                novelty_rejections += 1;
                outcome = ProposalOutcome::NoveltyExhausted;
                if evo.max_novelty_attempts.is_some_and(|cap| novelty_rejections >= cap) {
                    break;
                }
                continue;
            }

            let id = format!("gen-{generation:06}");
            let mutable_code = parse_blocks(&success.new_code)
                .map(|b| b.mutable_code())
                .unwrap_or_default();
            let (job, rel) = self.submit(generation, &success.new_code)?;
            let draft = ProgramRecord {
                id: id.clone(),
                parent_id: Some(ctx.parent.id.clone()),
                crossover_partner_id: partner.as_ref().map(|p| p.id.clone()),
                island_id: ctx.island_id,
                generation,
                code: success.new_code,
                mutable_code,
                fitness: 0.0,
                public_metrics: BTreeMap::new(),
                text_feedback: String::new(),
                offspring_count: 0,
                embedding,
                model_name: spec.name.clone(),
                patch_type,
                created_at: self.tick(),
            };
            self.pending.insert(
                job.job_id,
                PendingJob {
                    job: job.clone(),
                    draft,
                    arm,
                    parent_fitness: ctx.parent.fitness,
                },
            );
            eval_start = Some(EvalStartEvent {
                job_id: job.job_id,
                program_id: id.clone(),
                program_path: rel,
                in_flight: self.scheduler.in_flight(),
            });
            outcome = ProposalOutcome::Submitted;
            if let Some(s) = summary.as_mut() {
                s.program_id = Some(id);
            }
            break;
        }

        let mut event = summary.expect("at least one round");
        event.outcome = outcome;
        event.rounds = rounds;
        event.provider_calls = provider_calls;
        event.provider_error = provider_error;
        self.log(generation, Event::Proposal(event))?;
        if let Some(start) = eval_start {
            self.log(generation, Event::EvalStart(start))?;
        }
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<(), RunError> {
        self.journal.flush()?;
        let (replay, replay_cursor) = match self.gateway.transcript() {
            TranscriptMode::Replay { store, .. } => (true, Some(store.cursor())),
            _ => (false, None),
        };
        let transcript_len = self
            .gateway
            .transcript()
            .recorder()
            .map(|r| r.byte_len())
            .unwrap_or(0);
        let cp = Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            config: self.config.clone(),
            preset: self.preset.clone(),
            generation: self.generation,
            completed: self.completed,
            archive: self.archive.clone(),
            bandit: self.bandit.clone(),
            rng: self.rng.clone(),
            scratchpad: self.scratchpad.clone(),
            meta_recent: self.meta_recent.clone(),
            pending: self.pending.values().cloned().collect(),
            next_job_id: self.next_job_id,
            clock: self.clock,
            collected: self.collected,
            initial_fitness: self.initial_fitness,
            journal_len: self.journal.byte_len(),
            journal_next_seq: self.journal.next_seq(),
            replay,
            transcript_len,
            replay_cursor,
        };
        let path = self.run_dir.join(CHECKPOINT_FILE);
        let tmp = self.run_dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        let text = serde_json::to_string(&cp).expect("checkpoint serializes");
        fs::write(&tmp, text).map_err(io_err(format!("writing {}", tmp.display())))?;
        fs::rename(&tmp, &path).map_err(io_err(format!("replacing {}", path.display())))?;
        self.archive.snapshot(&self.run_dir.join(ARCHIVE_FILE))?;
        Ok(())
    }

    fn report_progress(&self) {
        if let Some(progress) = &self.progress {
            progress(&Progress {
                generation: self.generation,
                num_generations: self.config.evolution.num_generations,
                best_fitness: self.archive.best().map(|b| b.fitness),
                archive_size: self.archive.len(),
            });
        }
    }

    /// Runs one generation and checkpoints it.
    pub fn step(&mut self) -> Result<(), RunError> {
        let generation = self.generation + 1;
        self.generation = generation;
        self.collect(generation)?;
        self.migrate(generation)?;
        self.refresh_scratchpad(generation)?;
        self.propose(generation)?;
        self.checkpoint()?;
        self.report_progress();
        Ok(())
    }

    /// Runs the remaining generations, drains outstanding evaluations and
    /// writes the report. Returns early, without draining, at `stop_after`.
    pub fn run(mut self) -> Result<RunOutcome, RunError> {
        let total = self.config.evolution.num_generations;
        while !self.completed && self.generation < total {
            if self.stop_after.is_some_and(|stop| self.generation >= stop) {
                return self.interrupt();
            }
            self.step()?;
        }
        if self.stop_after.is_some_and(|stop| self.generation >= stop && !self.completed && stop < total) {
            return self.interrupt();
        }
        if !self.completed {
            self.drain(self.generation)?;
            self.completed = true;
            self.checkpoint()?;
        }
        let report = replay_run_dir(&self.run_dir)?;
        write_report(&report, &self.run_dir)?;
        Ok(RunOutcome {
            run_dir: self.run_dir.clone(),
            completed: true,
            generation: self.generation,
            report,
            peak_running: self.scheduler.peak_running(),
        })
    }

    /// Abandons in-flight work after waiting for it, leaving the run
    /// resumable from the last checkpoint.
    fn interrupt(mut self) -> Result<RunOutcome, RunError> {
        while self.scheduler.next_in_order().is_some() {}
        let report = replay_run_dir(&self.run_dir)?;
        Ok(RunOutcome {
            run_dir: self.run_dir.clone(),
            completed: false,
            generation: self.generation,
            report,
            peak_running: self.scheduler.peak_running(),
        })
    }
}

pub fn run(config: RunConfig, options: RunOptions) -> Result<RunOutcome, RunError> {
    Engine::start(config, options)?.run()
}

pub fn resume(run_dir: &Path, options: ResumeOptions) -> Result<RunOutcome, RunError> {
    Engine::resume(run_dir, options)?.run()
}
