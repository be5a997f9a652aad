use std::fs;
use std::path::{Path, PathBuf};

use clap::{Subcommand, ValueEnum};
use shinka_core::config::RunConfig;
use shinka_core::llm::ProviderConfig;
use shinka_core::tasks::{packing, synthetic};

use crate::CliError;

pub const SYNTHETIC_TARGET: [f64; 3] = [0.2, -0.1, 0.2];

#[derive(Clone, Copy, ValueEnum)]
pub enum TaskName {
    /// Vector task with scripted offline mutators; needs no API keys.
    Synthetic,
    /// 26-circle packing in the unit square; uses hosted models.
    Packing,
}

#[derive(Subcommand)]
pub enum TaskEval {
    /// Score a synthetic-task program against a target vector.
    Synthetic {
        #[arg(long = "program_path")]
        program_path: PathBuf,
        #[arg(long = "results_dir")]
        results_dir: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        target: Vec<f64>,
    },
    /// Run a packing program and verify the circles it writes.
    Packing {
        #[arg(long = "program_path")]
        program_path: PathBuf,
        #[arg(long = "results_dir")]
        results_dir: PathBuf,
        #[arg(long, default_value_t = packing::DEFAULT_SLACK)]
        slack: f64,
        #[arg(long, default_value = "python3")]
        interpreter: String,
    },
}

pub fn evaluate(task: TaskEval) -> Result<(), CliError> {
    let score = match task {
        TaskEval::Synthetic {
            program_path,
            results_dir,
            target,
        } => synthetic::evaluate(&program_path, &results_dir, &target)
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .combined_score,
        TaskEval::Packing {
            program_path,
            results_dir,
            slack,
            interpreter,
        } => packing::evaluate(&program_path, &results_dir, &interpreter, slack)
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .combined_score,
    };
    println!("combined_score {score}");
    Ok(())
}

fn self_command(args: &[&str]) -> Result<Vec<String>, CliError> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::Runtime(format!("cannot locate the shinka executable: {e}")))?;
    let mut command = vec![exe.to_string_lossy().into_owned()];
    command.extend(args.iter().map(|a| a.to_string()));
    Ok(command)
}

fn synthetic_config() -> Result<RunConfig, CliError> {
    let mut config = RunConfig {
        seed: 7,
        ..Default::default()
    };
    config.evolution.num_generations = 50;
    config.evolution.embedding_model = Some("ngram-embed".into());
    let target: Vec<String> = SYNTHETIC_TARGET.iter().map(|x| format!("{x:?}")).collect();
    config.evaluation.command =
        self_command(&["task-eval", "synthetic", "--target", &target.join(",")])?;
    config.evaluation.timeout_secs = 30.0;
    config.task.task_description =
        "Move the vector literal as close as possible to the hidden target.".into();
    let models = &mut config.models;
    for (name, q) in [("steady", 0.6), ("erratic", 0.1)] {
        models.llm_models.push(name.into());
        models.providers.insert(
            name.into(),
            ProviderConfig::ScriptedVector {
                target: SYNTHETIC_TARGET.to_vec(),
                q,
                step: 0.1,
            },
        );
    }
    models.providers.insert(
        "ngram-embed".into(),
        ProviderConfig::HashedNgram { dim: 64, n: 3 },
    );
    models.novelty_judge_model = Some("judge".into());
    models.providers.insert("judge".into(), ProviderConfig::DuplicateJudge);
    models.meta_model = Some("notes".into());
    models.providers.insert(
        "notes".into(),
        ProviderConfig::StaticText {
            text: "RECOMMENDATIONS\n1. Change one coordinate per proposal.\n".into(),
        },
    );
    Ok(config)
}

fn packing_config() -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    config.evolution.embedding_model = Some("text-embedding-3-small".into());
    config.evaluation.command = self_command(&["task-eval", "packing"])?;
    config.evaluation.timeout_secs = 120.0;
    config.task.task_description = "Place 26 non-overlapping circles inside the unit square so \
        that the total radius is maximized. construct_packing() must return 26 \
        (x, y, r) tuples."
        .into();
    let openai = |model: &str| ProviderConfig::Openai {
        model: Some(model.into()),
        base_url: None,
        api_key_env: Some("OPENAI_API_KEY".into()),
        options: Default::default(),
    };
    let models = &mut config.models;
    for name in ["gpt-4.1", "gpt-4.1-mini", "o4-mini"] {
        models.llm_models.push(name.into());
        models.providers.insert(name.into(), openai(name));
    }
    models.meta_model = Some("gpt-4.1-mini".into());
    models.novelty_judge_model = Some("gpt-4.1-mini".into());
    models.providers.insert(
        "text-embedding-3-small".into(),
        ProviderConfig::OpenaiEmbedding {
            model: Some("text-embedding-3-small".into()),
            base_url: None,
            api_key_env: Some("OPENAI_API_KEY".into()),
        },
    );
    Ok(config)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn scaffold(task: TaskName, dir: &Path) -> Result<(), CliError> {
    let (config, program) = match task {
        TaskName::Synthetic => (synthetic_config()?, synthetic::initial_program(SYNTHETIC_TARGET.len())),
        TaskName::Packing => (packing_config()?, packing::initial_program().to_string()),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let config_path = dir.join("config.toml");
    let program_path = dir.join("initial.py");
    write(&config_path, &config.to_toml_string())?;
    write(&program_path, &program)?;
    println!("wrote {} and {}", config_path.display(), program_path.display());
    Ok(())
}
