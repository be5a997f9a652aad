//! `shinka`: command-line front end for the evolution service.
//!
//! Every run-related subcommand talks to a run service over HTTP. Without
//! `--server`, a private service is started on 127.0.0.1 for the duration of
//! the command.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

mod examples;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shinka_core::config::Preset;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "shinka", version, about = "Evolutionary program search with language-model mutations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run and follow it to the end.
    Run(RunArgs),
    /// Start a run under an ablation preset.
    Ablate {
        #[arg(long)]
        preset: Preset,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Continue a run from its last checkpoint.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        stop_after: Option<u64>,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Rebuild report files from a run's journal.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// List ablation presets and their config deltas.
    Presets {
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8731")]
        addr: SocketAddr,
    },
    /// Write a starter config and initial program for a bundled task.
    Example {
        #[arg(value_enum)]
        task: examples::TaskName,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Evaluate one candidate program of a bundled task.
    TaskEval {
        #[command(subcommand)]
        task: examples::TaskEval,
    },
}

#[derive(Args, Clone, Default)]
pub struct ClientArgs {
    /// Base URL of a running service; a private one is started when absent.
    #[arg(long)]
    pub server: Option<String>,
    /// Print only the final status, as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Initial program with EVOLVE-BLOCK markers.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transcript to replay instead of calling providers.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Defaults to runs/<config name>-seed<seed>.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Stop after this generation, leaving the run resumable.
    #[arg(long)]
    pub stop_after: Option<u64>,
    #[command(flatten)]
    pub client: ClientArgs,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => session::run(args, None),
        Command::Ablate { preset, run } => session::run(run, Some(preset)),
        Command::Resume {
            run_dir,
            stop_after,
            client,
        } => session::resume(run_dir, stop_after, client),
        Command::Report {
            run_dir,
            out,
            client,
        } => session::report(run_dir, out, client),
        Command::Presets { client } => session::presets(client),
        Command::Serve { addr } => session::serve(addr),
        Command::Example { task, dir } => examples::scaffold(task, &dir),
        Command::TaskEval { task } => examples::evaluate(task),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
