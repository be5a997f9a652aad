//! Run reports reconstructed from the journal.
//!
//! The journal is the single source of truth: [`replay`] folds its events
//! into a [`RunReport`], and [`write_report`] renders the report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{compare_rank, PatchType, ProgramRecord};
use crate::journal::{check_sequence, read_journal, Event, EventRecord, JournalError, ProposalOutcome};
use crate::novelty::NoveltyDecision;

pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TREE_FILE: &str = "tree.json";
pub const BANDIT_FILE: &str = "bandit_history.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run directory {0} does not exist")]
    MissingRunDir(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub generation: u64,
    pub best_fitness: f64,
    pub best_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    /// Other ids merged into this node (the per-island seed copies).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub parent_id: Option<String>,
    pub crossover_partner_id: Option<String>,
    pub generation: u64,
    pub island_id: usize,
    pub fitness: f64,
    pub patch_type: PatchType,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditPoint {
    pub generation: u64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub proposals: u64,
    pub submitted: u64,
    pub patch_failures: u64,
    pub novelty_exhausted: u64,
    pub parse_retries: u64,
    pub patch_rejects: u64,
    pub novelty_rejects: BTreeMap<String, u64>,
    pub provider_errors: u64,
    pub evaluations: u64,
    pub eval_failures: BTreeMap<String, u64>,
    pub inserts: u64,
    pub evictions: u64,
    pub migrations: u64,
    pub meta_refreshes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub preset: Option<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub models: Vec<String>,
    pub language: Option<String>,
    pub best_program: Option<ProgramRecord>,
    pub fitness_trajectory: Vec<TrajectoryPoint>,
    pub evolution_tree: EvolutionTree,
    pub bandit_history: Vec<BanditPoint>,
    pub counters: Counters,
}

fn close_generation(report: &mut RunReport, best: &Option<ProgramRecord>, generation: u64) {
    if let Some(b) = best {
        report.fitness_trajectory.push(TrajectoryPoint {
            generation,
            best_fitness: b.fitness,
            best_id: b.id.clone(),
        });
    }
}

/// Folds journal events into a report.
pub fn replay(events: &[EventRecord]) -> Result<RunReport, ReportError> {
    check_sequence(events)?;
    let mut report = RunReport::default();
    let mut best: Option<ProgramRecord> = None;
    let mut last_generation: Option<u64> = None;
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut seed_root: Option<usize> = None;
    let mut aliases: BTreeMap<String, String> = BTreeMap::new();
    let mut known: BTreeSet<String> = BTreeSet::new();

    for record in events {
        if let Some(g) = last_generation {
            if record.generation != g {
                close_generation(&mut report, &best, g);
            }
        }
        last_generation = Some(record.generation);
        let c = &mut report.counters;
        match &record.event {
            Event::RunStart(start) => {
                report.preset = start.preset.clone();
                report.config_hash = Some(start.config_hash.clone());
                report.seed = Some(start.seed);
                report.models = start.config.models.llm_models.clone();
                report.language = Some(start.config.task.language.clone());
            }
            Event::Proposal(p) => {
                c.proposals += 1;
                match p.outcome {
                    ProposalOutcome::Submitted => c.submitted += 1,
                    ProposalOutcome::PatchFailed => c.patch_failures += 1,
                    ProposalOutcome::NoveltyExhausted => c.novelty_exhausted += 1,
                }
                if p.provider_error.is_some() {
                    c.provider_errors += 1;
                }
                report.bandit_history.push(BanditPoint {
                    generation: record.generation,
                    probabilities: p.model_probabilities.clone(),
                });
            }
            Event::ParseRetry(_) => c.parse_retries += 1,
            Event::PatchReject(_) => c.patch_rejects += 1,
            Event::NoveltyReject(n) => {
                let cause = match n.verdict.decision {
                    NoveltyDecision::RejectByEmbedding => "embedding",
                    _ => "judge",
                };
                *c.novelty_rejects.entry(cause.into()).or_default() += 1;
            }
            Event::EvalStart(_) => {}
            Event::EvalDone(_) => c.evaluations += 1,
            Event::EvalFail(f) => {
                *c.eval_failures.entry(f.kind.as_str().into()).or_default() += 1;
            }
            Event::Insert(ins) => {
                c.inserts += 1;
                if ins.evicted.is_some() {
                    c.evictions += 1;
                }
                let r = &ins.record;
                if best.as_ref().is_none_or(|b| compare_rank(r, b).is_lt()) {
                    best = Some(r.clone());
                }
                if r.patch_type == PatchType::Init {
                    if let Some(root) = seed_root {
                        nodes[root].aliases.push(r.id.clone());
                        aliases.insert(r.id.clone(), nodes[root].id.clone());
                        continue;
                    }
                    seed_root = Some(nodes.len());
                }
                known.insert(r.id.clone());
                nodes.push(TreeNode {
                    id: r.id.clone(),
                    aliases: Vec::new(),
                    parent_id: r.parent_id.clone(),
                    crossover_partner_id: r.crossover_partner_id.clone(),
                    generation: r.generation,
                    island_id: r.island_id,
                    fitness: r.fitness,
                    patch_type: r.patch_type,
                    model_name: r.model_name.clone(),
                });
            }
            Event::BanditUpdate(_) => {}
            Event::Migration(m) => c.migrations += m.moves.len() as u64,
            Event::MetaRefresh(_) => c.meta_refreshes += 1,
        }
    }
    if let Some(g) = last_generation {
        close_generation(&mut report, &best, g);
    }

    let canonical = |id: &String| aliases.get(id).cloned().unwrap_or_else(|| id.clone());
    for node in &mut nodes {
        node.parent_id = node.parent_id.as_ref().map(canonical);
        node.crossover_partner_id = node.crossover_partner_id.as_ref().map(canonical);
    }
    report.evolution_tree.edges = nodes
        .iter()
        .filter_map(|n| {
            let parent = n.parent_id.as_ref()?;
            known.contains(parent).then(|| TreeEdge {
                parent: parent.clone(),
                child: n.id.clone(),
            })
        })
        .collect();
    report.evolution_tree.nodes = nodes;
    report.best_program = best;
    Ok(report)
}

pub fn replay_run_dir(run_dir: &Path) -> Result<RunReport, ReportError> {
    if !run_dir.is_dir() {
        return Err(ReportError::MissingRunDir(run_dir.display().to_string()));
    }
    let events = read_journal(&crate::journal::journal_path(run_dir))?;
    replay(&events)
}

pub fn trajectory_csv(report: &RunReport) -> String {
    let mut out = String::from("generation,best_fitness,best_id\n");
    for p in &report.fitness_trajectory {
        out.push_str(&format!("{},{:?},{}\n", p.generation, p.best_fitness, p.best_id));
    }
    out
}

pub fn bandit_csv(report: &RunReport) -> String {
    let mut out = String::from("generation");
    for m in &report.models {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for p in &report.bandit_history {
        out.push_str(&p.generation.to_string());
        for x in &p.probabilities {
            out.push_str(&format!(",{x:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn extension_for(language: &str) -> &'static str {
    match language.to_ascii_lowercase().as_str() {
        "python" | "py" => "py",
        "c++" | "cpp" => "cpp",
        "c" => "c",
        "rust" => "rs",
        "javascript" | "js" => "js",
        "julia" => "jl",
        _ => "txt",
    }
}

/// Best program file name for a report, e.g. `best_program.py`.
pub fn best_program_file(report: &RunReport) -> String {
    format!(
        "best_program.{}",
        extension_for(report.language.as_deref().unwrap_or("python"))
    )
}

/// Writes report.json, trajectory.csv, tree.json, bandit_history.csv and
/// the best program into `out_dir`.
pub fn write_report(report: &RunReport, out_dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(REPORT_FILE), pretty(report))?;
    fs::write(out_dir.join(TRAJECTORY_FILE), trajectory_csv(report))?;
    fs::write(out_dir.join(TREE_FILE), pretty(&report.evolution_tree))?;
    fs::write(out_dir.join(BANDIT_FILE), bandit_csv(report))?;
    if let Some(best) = &report.best_program {
        fs::write(out_dir.join(best_program_file(report)), &best.code)?;
    }
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}
