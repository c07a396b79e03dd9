//! `openham`: run stationary-covariance experiments described by a JSON
//! config and write plot-ready artifacts.

mod config;
mod output;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;

use config::{Overrides, Task};
use output::RunInfo;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{operation}: {message}")]
    Config {
        operation: &'static str,
        message: String,
    },
    #[error("{operation}: {source}")]
    Compute {
        operation: &'static str,
        source: openham::Error,
    },
    #[error("writing outputs: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(operation: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            operation,
            message: message.into(),
        }
    }

    pub fn compute(operation: &'static str, source: openham::Error) -> Self {
        CliError::Compute { operation, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Compute { .. } | CliError::Output(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Compute { .. } => "compute",
            CliError::Output(_) => "output",
        }
    }

    pub fn operation(&self) -> Option<&'static str> {
        match self {
            CliError::Config { operation, .. } | CliError::Compute { operation, .. } => {
                Some(operation)
            }
            CliError::Output(_) => None,
        }
    }
}

/// Stationary covariances of damped, noise-driven harmonic systems.
#[derive(Debug, Parser)]
#[command(name = "openham", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    task: Task,
    /// Experiment config (JSON). A manifest from an earlier run replays it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Engine name, comma-separated list, or `all`.
    #[arg(long)]
    engine: Option<String>,
    /// Output directory; OPENHAM_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs serially.
    #[arg(long)]
    workers: Option<usize>,
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("error: {err}");
    eprintln!("{}", output::error_record(err));
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());

    let config = match &cli.config {
        Some(path) => match config::load(path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => config::ExperimentConfig::default(),
    };
    let overrides = Overrides {
        engine: cli.engine.clone(),
        out: cli.out.clone(),
        seed: cli.seed,
        workers: cli.workers,
        env_out: std::env::var_os("OPENHAM_OUT")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from),
    };
    let plan = match config::validate(Some(cli.task), config, overrides) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build_global()
    {
        eprintln!("warning: could not size the worker pool: {e}");
    }

    let outcome = tasks::run(&plan);
    let info = RunInfo {
        config_path: cli.config.as_deref(),
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    match outcome {
        Ok(art) => {
            for line in &art.summary {
                println!("{line}");
            }
            if let Err(e) = output::write_run(&plan, &art, &info) {
                return fail(&e);
            }
            println!("wrote {}", plan.out.display());
            if art.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            if matches!(e, CliError::Compute { .. }) {
                if let Err(w) = output::write_failure(&plan, &e, &info) {
                    eprintln!("error: {w}");
                }
            }
            fail(&e)
        }
    }
}
