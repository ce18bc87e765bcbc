mod output;
mod report;
mod run;
mod svg;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradmarket_core::config::OUTPUT_DIR_ENV;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "gradmarket", version, about = "Gradient marketplace experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for all of its repeats.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the cross product of a sweep spec.
    Sweep {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Plot a grid.csv, a summary.json, or a run directory.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Override a config field, e.g. `--set attack.adversary_fraction=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} sweep cells failed")]
    CellsFailed { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::CellsFailed { .. } => 3,
        }
    }
}

impl From<gradmarket_core::config::ConfigError> for CliError {
    fn from(e: gradmarket_core::config::ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

fn output_dir(flag: Option<PathBuf>, default: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, common } => {
            let out = output_dir(common.out, "runs/latest");
            let pool = thread_pool(common.jobs)?;
            pool.install(|| run::cmd_run(&config, &common.overrides, common.seed, &out))
        }
        Command::Sweep { spec, common } => {
            let out = output_dir(common.out, "runs/sweep");
            let pool = thread_pool(common.jobs)?;
            pool.install(|| sweep::cmd_sweep(&spec, &common.overrides, common.seed, &out))
        }
        Command::Report { inputs, out } => {
            let out = output_dir(out, "runs/report");
            report::cmd_report(&inputs, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
