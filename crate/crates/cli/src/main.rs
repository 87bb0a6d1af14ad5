//! `softirl`: exact solves, IRL seed sweeps and property-suite verification.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<softirl::Error> for CliError {
    fn from(e: softirl::Error) -> Self {
        use softirl::Error as E;
        match e {
            E::SolverFailure { .. } | E::StarvedState { .. } | E::Singular(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "softirl", version, about = "Model-free entropy-regularized IRL on finite MDPs")]
struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the configured environment exactly and write V*, Q*, π*, ν and σ.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "softirl-out")]
        out: PathBuf,
    },
    /// Run the IRL algorithm once per seed and write traces and a summary.
    Irl {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; overrides the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        #[arg(long, default_value = "softirl-out")]
        out: PathBuf,
    },
    /// Run randomized property suites and write a pass/fail report.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value = "softirl-out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { config, out } => {
            let cfg = config::RunConfig::load(&config)?;
            commands::solve(&cfg, &out)
        }
        Command::Irl { config, seed, out } => {
            let cfg = config::RunConfig::load(&config)?;
            let seeds = seed.unwrap_or_else(|| cfg.seeds.clone());
            if seeds.is_empty() {
                return Err(CliError::Config("seed list must not be empty".into()));
            }
            commands::irl(&cfg, &seeds, &out)
        }
        Command::Verify {
            suite,
            seed,
            trials,
            out,
        } => commands::verify(&suite, seed, trials, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Config(format!("cannot start {n} worker threads: {e}"))),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("softirl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
