use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{Config, ConfigError};
use output::Artifact;

#[derive(Parser)]
#[command(name = "tclpop", version, about = "TCL population abstraction, error bounds and tracking control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Root seed; overrides simulation.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Monte Carlo mean power of the population.
    Simulate,
    /// Build the Markov chain abstraction and the baseline; write the matrices.
    Abstract,
    /// Monte Carlo mean against the aggregate, baseline and reduced models.
    Compare,
    /// Abstraction error bounds, optionally checked by Monte Carlo.
    Bounds,
    /// Closed-loop tracking of a power reference.
    Track,
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config is required".into()))?;
    let cfg = config::with_seed(Config::load(path)?, cli.seed);
    let art = Artifact::create(&cli.out, &cfg)?;
    log::info!("writing to {}", cli.out.display());
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &art),
        Command::Abstract => commands::abstract_models(&cfg, &art),
        Command::Compare => commands::compare(&cfg, &art),
        Command::Bounds => commands::bounds(&cfg, &art),
        Command::Track => commands::track(&cfg, &art),
    }
}

/// 2 for configuration problems, 3 when a numerical guard trips.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<tclpop::Error>() {
        Some(tclpop::Error::InvalidParameter(_)) | Some(tclpop::Error::InvalidInput(_)) => 2,
        Some(tclpop::Error::Numerical(_)) | Some(tclpop::Error::Intractable { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
