#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use shinka_core::config::RunConfig;
use shinka_core::scheduler::{collect, EvalFailure, EvaluationJob, EvaluationResult, FailureKind, JobRunner};
use shinka_core::tasks::synthetic;

pub const TARGET: [f64; 3] = [0.2, -0.1, 0.2];

/// Evaluates synthetic programs in-process and tracks concurrency.
pub struct SyntheticRunner {
    target: Vec<f64>,
    delay: Duration,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl SyntheticRunner {
    pub fn new(target: &[f64]) -> Arc<Self> {
        Self::with_delay(target, Duration::ZERO)
    }

    pub fn with_delay(target: &[f64], delay: Duration) -> Arc<Self> {
        Arc::new(Self {
            target: target.to_vec(),
            delay,
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        })
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl JobRunner for SyntheticRunner {
    fn run(&self, job: &EvaluationJob) -> Result<EvaluationResult, EvalFailure> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let outcome = synthetic::evaluate(&job.program_path, &job.results_dir, &self.target)
            .map_err(|e| EvalFailure {
                kind: FailureKind::NonZeroExit,
                message: e.to_string(),
                output: String::new(),
                runtime_seconds: 0.0,
            })
            .and_then(|_| collect(&job.results_dir, 0.0));
        self.active.fetch_sub(1, Ordering::SeqCst);
        outcome
    }
}

pub fn vector_toml(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

pub fn scripted(q: f64) -> String {
    format!(
        "kind = \"scripted_vector\"\ntarget = {}\nq = {q}\nstep = 0.1\n",
        vector_toml(&TARGET)
    )
}

/// Synthetic-task config with one scripted model per `(name, q)` pair.
pub fn synthetic_config(models: &[(&str, f64)], generations: u64, seed: u64, extra: &str) -> RunConfig {
    let providers: Vec<(&str, String)> = models.iter().map(|(n, q)| (*n, scripted(*q))).collect();
    config_with(&providers, generations, seed, extra)
}

/// Synthetic-task config with arbitrary mutation providers, given as TOML bodies.
pub fn config_with(models: &[(&str, String)], generations: u64, seed: u64, extra: &str) -> RunConfig {
    let names: Vec<String> = models.iter().map(|(n, _)| format!("\"{n}\"")).collect();
    let mut text = format!(
        "seed = {seed}\n{extra}\n\
         [evolution]\nnum_generations = {generations}\nembedding_model = \"embed\"\nmeta_rec_interval = 10\n\n\
         [models]\nllm_models = [{}]\nmeta_model = \"meta\"\nnovelty_judge_model = \"judge\"\n\n\
         [models.providers.embed]\nkind = \"hashed_ngram\"\ndim = 64\nn = 3\n\n\
         [models.providers.judge]\nkind = \"duplicate_judge\"\n\n\
         [models.providers.meta]\nkind = \"static_text\"\ntext = \"RECOMMENDATIONS\\n1. Move one coordinate at a time.\\n\"\n\n\
         [evaluation]\ncommand = [\"unused\"]\n",
        names.join(", ")
    );
    for (name, body) in models {
        text.push_str(&format!("\n[models.providers.{name}]\n{body}"));
    }
    RunConfig::from_toml_str(&text).expect("synthetic config parses")
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}
