//! `explq`: closed-form solve, policy iteration, RL training and Monte-Carlo
//! evaluation for the entropy-regularized mean-variance ALM problem.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Run;

/// Environment variable consulted when neither `--out` nor `output_dir` is set.
const OUT_ENV: &str = "EXPLQ_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] explq::Error),
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "explq", version, about = "Entropy-regularized LQ control for mean-variance ALM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` and $EXPLQ_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training episodes (train) or evaluation episodes (evaluate).
    #[arg(long, global = true)]
    episodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write the closed-form Riccati solution to riccati.csv.
    Solve,
    /// Run policy iteration and write improvement.csv.
    Iterate,
    /// Train the five-parameter model; writes training_log.csv and summary.csv.
    Train,
    /// Evaluate the optimal policy by Monte Carlo; writes summary.csv.
    Evaluate,
}

fn resolve(cli: &Cli) -> Result<Run, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config =
        config::parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.episodes {
        match cli.command {
            Command::Train => {
                if n < config.batch {
                    return Err(CliError::Config(format!(
                        "--episodes {n} is smaller than batch = {}",
                        config.batch
                    )));
                }
                config.episodes = n;
            }
            Command::Evaluate => {
                if n < 2 {
                    return Err(CliError::Config("--episodes must be at least 2".into()));
                }
                config.eval_episodes = n;
            }
            Command::Solve | Command::Iterate => log::warn!("--episodes has no effect on this command"),
        }
    }

    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out.display())))?;

    let label = config.label.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().replace([',', '"'], "_"))
            .unwrap_or_else(|| "run".into())
    });
    Ok(Run { config, label, out })
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let run = resolve(cli)?;
    match cli.command {
        Command::Solve => commands::run_solve(&run),
        Command::Iterate => commands::run_iterate(&run),
        Command::Train => commands::run_train(&run),
        Command::Evaluate => commands::run_evaluate(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap reserves 2 for usage errors; here 2 means a numerical failure.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
