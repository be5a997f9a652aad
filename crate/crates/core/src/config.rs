//! Run configuration and ablation presets.
//!
//! A run is configured by one TOML document with the sections `[database]`,
//! `[evolution]`, `[models]`, `[evaluation]` and `[task]` plus a top-level
//! `seed`. Unknown keys anywhere are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::archive::{ArchiveParams, InspirationCounts, PatchType};
use crate::llm::{EndpointKind, ModelSpec, ProviderConfig, RetryPolicy};
use crate::novelty::NoveltyMode;
use crate::sampling::{SelectionKind, SelectionStrategy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset '{name}'; available presets: {}", PRESET_NAMES.join(", "))]
    UnknownPreset { name: String },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatabaseConfig {
    pub archive_size: usize,
    pub elite_selection_ratio: f64,
    pub num_islands: usize,
    pub migration_interval: u64,
    pub migration_rate: f64,
    pub island_elitism: bool,
    pub parent_selection: SelectionKind,
    pub power_law_alpha: f64,
    pub weighted_lambda: f64,
    pub num_archive_inspirations: usize,
    pub num_top_k_inspirations: usize,
}

impl Default for DatabaseConfig {
    fn default() -> Self {
        Self {
            archive_size: 40,
            elite_selection_ratio: 0.3,
            num_islands: 2,
            migration_interval: 10,
            migration_rate: 0.0,
            island_elitism: true,
            parent_selection: SelectionKind::Weighted,
            power_law_alpha: 1.0,
            weighted_lambda: 10.0,
            num_archive_inspirations: 4,
            num_top_k_inspirations: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicSelection {
    /// Uniform sampling over the pool.
    Fixed,
    Ucb1,
}

impl DynamicSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            DynamicSelection::Fixed => "fixed",
            DynamicSelection::Ucb1 => "ucb1",
        }
    }
}

/// When finished evaluations are folded into the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionOrder {
    /// Oldest job first, waiting only when every slot is busy. Reproducible.
    Submission,
    /// Whatever has finished before each proposal. Depends on timing.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub patch_types: Vec<PatchType>,
    pub patch_type_probs: Vec<f64>,
    pub num_generations: u64,
    pub max_parallel_jobs: usize,
    pub max_patch_resamples: u32,
    pub max_patch_attempts: u32,
    /// `None` disables the meta scratchpad.
    pub meta_rec_interval: Option<u64>,
    pub max_meta_recommendations: usize,
    pub embedding_model: Option<String>,
    /// `None`: novelty rejections are bounded only by `max_patch_attempts`.
    pub max_novelty_attempts: Option<u32>,
    pub code_embed_sim_threshold: f64,
    pub novelty_mode: NoveltyMode,
    pub llm_dynamic_selection: DynamicSelection,
    pub exploration_coefficient: f64,
    pub collection_order: CollectionOrder,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            patch_types: vec![PatchType::Diff, PatchType::Full, PatchType::Cross],
            patch_type_probs: vec![0.45, 0.45, 0.1],
            num_generations: 150,
            max_parallel_jobs: 5,
            max_patch_resamples: 3,
            max_patch_attempts: 3,
            meta_rec_interval: Some(10),
            max_meta_recommendations: 5,
            embedding_model: None,
            max_novelty_attempts: None,
            code_embed_sim_threshold: 0.95,
            novelty_mode: NoveltyMode::EmbeddingJudge,
            llm_dynamic_selection: DynamicSelection::Ucb1,
            exploration_coefficient: 1.0,
            collection_order: CollectionOrder::Submission,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub llm_models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub max_tokens: u32,
    pub meta_model: Option<String>,
    pub novelty_judge_model: Option<String>,
    pub retry: RetryPolicy,
    pub providers: BTreeMap<String, ProviderConfig>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            llm_models: Vec::new(),
            temperatures: vec![0.0, 0.5, 1.0],
            max_tokens: 16384,
            meta_model: None,
            novelty_judge_model: None,
            retry: RetryPolicy::default(),
            providers: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Executable and leading arguments; `--program_path` and
    /// `--results_dir` are appended per job.
    pub command: Vec<String>,
    pub timeout_secs: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_secs: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub language: String,
    pub task_description: String,
    /// Directory with replacement prompt templates (`diff.txt`, ...).
    pub templates_dir: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let defaults = crate::mutation::prompt::PromptSettings::default();
        Self {
            language: defaults.language,
            task_description: defaults.task_description,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub database: DatabaseConfig,
    pub evolution: EvolutionConfig,
    pub models: ModelsConfig,
    pub evaluation: EvaluationConfig,
    pub task: TaskConfig,
}


impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file. A relative `templates_dir` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(dir) = &self.task.templates_dir {
            if dir.is_relative() {
                self.task.templates_dir = Some(base.join(dir));
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn archive_params(&self) -> ArchiveParams {
        ArchiveParams {
            capacity: self.database.archive_size,
            elite_ratio: self.database.elite_selection_ratio,
            num_islands: self.database.num_islands,
            island_elitism: self.database.island_elitism,
        }
    }

    pub fn strategy(&self) -> Result<SelectionStrategy, ConfigError> {
        SelectionStrategy::new(
            self.database.parent_selection,
            self.database.power_law_alpha,
            self.database.weighted_lambda,
        )
        .map_err(|e| invalid(e.to_string()))
    }

    pub fn inspiration_counts(&self) -> InspirationCounts {
        InspirationCounts {
            top_k: self.database.num_top_k_inspirations,
            random: self.database.num_archive_inspirations,
        }
    }

    pub fn model_pool(&self) -> Vec<ModelSpec> {
        self.models
            .llm_models
            .iter()
            .map(|name| ModelSpec {
                name: name.clone(),
                endpoint_kind: EndpointKind::Chat,
                temperatures: self.models.temperatures.clone(),
                max_tokens: self.models.max_tokens,
            })
            .collect()
    }

    pub fn apply_overrides(&mut self, o: &ConfigOverrides) {
        if let Some(kind) = o.parent_selection {
            self.database.parent_selection = kind;
        }
        if o.single_model == Some(true) {
            self.models.llm_models.truncate(1);
        }
        if let Some(mode) = o.llm_dynamic_selection {
            self.evolution.llm_dynamic_selection = mode;
        }
        if let Some(mode) = o.novelty_mode {
            self.evolution.novelty_mode = mode;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.archive_params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.strategy()?;
        let db = &self.database;
        if !(0.0..=1.0).contains(&db.migration_rate) {
            return Err(invalid("database.migration_rate must lie in [0, 1]"));
        }
        if db.migration_interval == 0 {
            return Err(invalid("database.migration_interval must be >= 1"));
        }

        let evo = &self.evolution;
        if evo.patch_types.is_empty() || evo.patch_types.len() != evo.patch_type_probs.len() {
            return Err(invalid(
                "evolution.patch_types and evolution.patch_type_probs must be nonempty and of equal length",
            ));
        }
        if evo.patch_types.contains(&PatchType::Init) {
            return Err(invalid("evolution.patch_types may not contain 'init'"));
        }
        if evo.patch_type_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("evolution.patch_type_probs must be finite and >= 0"));
        }
        let total: f64 = evo.patch_type_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "evolution.patch_type_probs must sum to 1, got {total}"
            )));
        }
        for (name, value) in [
            ("num_generations", evo.num_generations),
            ("max_parallel_jobs", evo.max_parallel_jobs as u64),
            ("max_patch_resamples", evo.max_patch_resamples as u64),
            ("max_patch_attempts", evo.max_patch_attempts as u64),
            ("max_meta_recommendations", evo.max_meta_recommendations as u64),
        ] {
            if value == 0 {
                return Err(invalid(format!("evolution.{name} must be >= 1")));
            }
        }
        if evo.meta_rec_interval == Some(0) || evo.max_novelty_attempts == Some(0) {
            return Err(invalid(
                "evolution.meta_rec_interval and evolution.max_novelty_attempts must be >= 1 or absent",
            ));
        }
        if !(evo.code_embed_sim_threshold > 0.0 && evo.code_embed_sim_threshold <= 1.0) {
            return Err(invalid("evolution.code_embed_sim_threshold must lie in (0, 1]"));
        }
        if !(evo.exploration_coefficient.is_finite() && evo.exploration_coefficient >= 0.0) {
            return Err(invalid("evolution.exploration_coefficient must be >= 0"));
        }

        let models = &self.models;
        if models.llm_models.is_empty() {
            return Err(invalid("models.llm_models must name at least one model"));
        }
        for spec in self.model_pool() {
            spec.validate().map_err(invalid)?;
        }
        for (name, provider) in &models.providers {
            provider.validate(name).map_err(invalid)?;
        }
        let require = |name: &str, kind: EndpointKind, role: &str| -> Result<(), ConfigError> {
            match models.providers.get(name) {
                None => Err(invalid(format!(
                    "{role} '{name}' has no entry under [models.providers]"
                ))),
                Some(p) if p.endpoint_kind() != kind && !matches!(p, ProviderConfig::Tripwire) => {
                    Err(invalid(format!(
                        "{role} '{name}' must be a {} provider",
                        match kind {
                            EndpointKind::Chat => "chat",
                            EndpointKind::Embedding => "embedding",
                        }
                    )))
                }
                Some(_) => Ok(()),
            }
        };
        for name in &models.llm_models {
            require(name, EndpointKind::Chat, "mutation model")?;
        }
        if let Some(meta) = &models.meta_model {
            require(meta, EndpointKind::Chat, "meta model")?;
        }
        if evo.novelty_mode != NoveltyMode::Off {
            let embed = evo.embedding_model.as_deref().ok_or_else(|| {
                invalid(format!(
                    "novelty mode '{}' needs evolution.embedding_model",
                    evo.novelty_mode
                ))
            })?;
            require(embed, EndpointKind::Embedding, "embedding model")?;
        }
        if evo.novelty_mode == NoveltyMode::EmbeddingJudge {
            let judge = models.novelty_judge_model.as_deref().ok_or_else(|| {
                invalid("novelty mode 'embedding_judge' needs models.novelty_judge_model")
            })?;
            require(judge, EndpointKind::Chat, "novelty judge model")?;
        }

        if self.evaluation.command.is_empty() {
            return Err(invalid("evaluation.command must name an executable"));
        }
        if !(self.evaluation.timeout_secs.is_finite() && self.evaluation.timeout_secs > 0.0) {
            return Err(invalid("evaluation.timeout_secs must be positive"));
        }
        Ok(())
    }
}

/// Config delta of an ablation preset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_selection: Option<SelectionKind>,
    /// Keep only the first model of the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_model: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_dynamic_selection: Option<DynamicSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty_mode: Option<NoveltyMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BestOfN,
    HillClimb,
    Weighted,
    SingleLlm,
    FixedEnsemble,
    BanditEnsemble,
    NoRejection,
    EmbedRejection,
    EmbedPlusJudge,
}

pub const PRESET_NAMES: [&str; 9] = [
    "best_of_n",
    "hill_climb",
    "weighted",
    "single_llm",
    "fixed_ensemble",
    "bandit_ensemble",
    "no_rejection",
    "embed_rejection",
    "embed_plus_judge",
];

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::BestOfN,
        Preset::HillClimb,
        Preset::Weighted,
        Preset::SingleLlm,
        Preset::FixedEnsemble,
        Preset::BanditEnsemble,
        Preset::NoRejection,
        Preset::EmbedRejection,
        Preset::EmbedPlusJudge,
    ];

    pub fn as_str(self) -> &'static str {
        PRESET_NAMES[Self::ALL.iter().position(|p| *p == self).expect("listed")]
    }

    /// Which ablation axis the preset belongs to.
    pub fn axis(self) -> &'static str {
        match self {
            Preset::BestOfN | Preset::HillClimb | Preset::Weighted => "parent_selection",
            Preset::SingleLlm | Preset::FixedEnsemble | Preset::BanditEnsemble => "ensemble",
            Preset::NoRejection | Preset::EmbedRejection | Preset::EmbedPlusJudge => "rejection",
        }
    }

    pub fn overrides(self) -> ConfigOverrides {
        let mut o = ConfigOverrides::default();
        match self {
            Preset::BestOfN => o.parent_selection = Some(SelectionKind::BestOfN),
            Preset::HillClimb => o.parent_selection = Some(SelectionKind::HillClimb),
            Preset::Weighted => o.parent_selection = Some(SelectionKind::Weighted),
            Preset::SingleLlm => {
                o.single_model = Some(true);
                o.llm_dynamic_selection = Some(DynamicSelection::Fixed);
            }
            Preset::FixedEnsemble => o.llm_dynamic_selection = Some(DynamicSelection::Fixed),
            Preset::BanditEnsemble => o.llm_dynamic_selection = Some(DynamicSelection::Ucb1),
            Preset::NoRejection => o.novelty_mode = Some(NoveltyMode::Off),
            Preset::EmbedRejection => o.novelty_mode = Some(NoveltyMode::Embedding),
            Preset::EmbedPlusJudge => o.novelty_mode = Some(NoveltyMode::EmbeddingJudge),
        }
        o
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownPreset { name: s.to_string() })
    }
}

pub fn ablation_presets(name: &str) -> Result<ConfigOverrides, ConfigError> {
    Ok(name.parse::<Preset>()?.overrides())
}
