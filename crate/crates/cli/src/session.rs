use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use shinka_client::{Client, ClientError};
use shinka_core::api::{
    CreateRunRequest, ErrorCode, ResumeRunRequest, RunState, RunStatus, WriteReportRequest,
};
use shinka_core::config::{Preset, RunConfig};

use crate::{ClientArgs, CliError, RunArgs};

const POLL: Duration = Duration::from_millis(50);

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start async runtime: {e}")))
}

fn client_error(e: ClientError) -> CliError {
    match e.code() {
        Some(ErrorCode::Config | ErrorCode::NotFound) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path)
        .map_err(|e| CliError::Config(format!("cannot resolve {}: {e}", path.display())))
}

/// Runs `body` against the given service, or against a private one.
fn with_client<T, F, Fut>(args: &ClientArgs, body: F) -> Result<T, CliError>
where
    F: FnOnce(Client) -> Fut,
    Fut: Future<Output = Result<T, CliError>>,
{
    runtime()?.block_on(async {
        let (client, server) = match &args.server {
            Some(url) => (Client::new(url.clone()), None),
            None => {
                let (addr, handle) = shinka_server::spawn(SocketAddr::from(([127, 0, 0, 1], 0)))
                    .await
                    .map_err(|e| CliError::Runtime(format!("cannot start the run service: {e}")))?;
                (Client::new(format!("http://{addr}")), Some(handle))
            }
        };
        let result = body(client).await;
        if let Some(handle) = server {
            handle.abort();
        }
        result
    })
}

/// Follows a run to its end and maps the final state to an exit status.
async fn follow(client: &Client, started: RunStatus, json: bool) -> Result<(), CliError> {
    if !json {
        eprintln!("run {} in {}", started.id, started.run_dir.display());
    }
    let status = client
        .wait(&started.id, POLL, |s| {
            if !json {
                let best = s
                    .best_fitness
                    .map(|f| format!("{f:.6}"))
                    .unwrap_or_else(|| "-".into());
                eprintln!(
                    "generation {}/{}  best {best}  archive {}",
                    s.generation, s.num_generations, s.archive_size
                );
            }
        })
        .await
        .map_err(client_error)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&status).expect("status serializes"));
    } else {
        let best = status.best_fitness.map(|f| f.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{} {:?} at generation {}; best fitness {best}; run directory {}",
            status.id,
            status.state,
            status.generation,
            status.run_dir.display()
        );
    }
    match (status.state, status.error) {
        (RunState::Failed, Some(e)) if e.code == ErrorCode::Config => Err(CliError::Config(e.message)),
        (RunState::Failed, e) => Err(CliError::Runtime(
            e.map(|e| e.message).unwrap_or_else(|| "run failed".into()),
        )),
        _ => Ok(()),
    }
}

fn build_request(args: &RunArgs, preset: Option<Preset>) -> Result<CreateRunRequest, CliError> {
    let config_path = absolute(&args.config)?;
    let mut config = RunConfig::load(&config_path).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let initial_program = std::fs::read_to_string(&args.init)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.init.display())))?;
    let run_dir = match &args.run_dir {
        Some(dir) => dir.clone(),
        None => {
            let stem = config_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            let suffix = preset.map(|p| format!("-{}", p.as_str())).unwrap_or_default();
            PathBuf::from("runs").join(format!("{stem}{suffix}-seed{}", config.seed))
        }
    };
    Ok(CreateRunRequest {
        config,
        initial_program,
        run_dir: absolute(&run_dir)?,
        replay: args.replay.as_deref().map(absolute).transpose()?,
        preset,
        stop_after: args.stop_after,
    })
}

pub fn run(args: RunArgs, preset: Option<Preset>) -> Result<(), CliError> {
    let request = build_request(&args, preset)?;
    let json = args.client.json;
    with_client(&args.client, |client| async move {
        let started = client.create_run(&request).await.map_err(client_error)?;
        follow(&client, started, json).await
    })
}

pub fn resume(run_dir: PathBuf, stop_after: Option<u64>, args: ClientArgs) -> Result<(), CliError> {
    let request = ResumeRunRequest {
        run_dir: absolute(&run_dir)?,
        stop_after,
    };
    let json = args.json;
    with_client(&args, |client| async move {
        let started = client.resume_run(&request).await.map_err(client_error)?;
        follow(&client, started, json).await
    })
}

pub fn report(run_dir: PathBuf, out: PathBuf, args: ClientArgs) -> Result<(), CliError> {
    let request = WriteReportRequest {
        run_dir: absolute(&run_dir)?,
        out_dir: absolute(&out)?,
    };
    let json = args.json;
    with_client(&args, |client| async move {
        let report = client.write_report(&request).await.map_err(client_error)?;
        if json {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        } else {
            let best = report
                .best_program
                .as_ref()
                .map(|b| format!("{} ({})", b.id, b.fitness))
                .unwrap_or_else(|| "-".into());
            println!(
                "wrote report for {} generations to {}; best program {best}",
                report.fitness_trajectory.len().saturating_sub(1),
                request.out_dir.display()
            );
        }
        Ok(())
    })
}

pub fn presets(args: ClientArgs) -> Result<(), CliError> {
    let json = args.json;
    with_client(&args, |client| async move {
        let presets = client.presets().await.map_err(client_error)?;
        if json {
            println!("{}", serde_json::to_string_pretty(&presets).expect("presets serialize"));
        } else {
            for p in presets {
                let delta = serde_json::to_string(&p.overrides).expect("overrides serialize");
                println!("{:<18} {:<18} {delta}", p.name, p.axis);
            }
        }
        Ok(())
    })
}

pub fn serve(addr: SocketAddr) -> Result<(), CliError> {
    runtime()?.block_on(async {
        let (bound, handle) = shinka_server::spawn(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{bound}");
        match handle.await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(CliError::Runtime(e.to_string())),
            Err(e) => Err(CliError::Runtime(e.to_string())),
        }
    })
}
