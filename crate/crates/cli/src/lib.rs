//! Command-line front end: simulate data, fit the joint or longitudinal-only
//! model, run replication studies and summarize posterior draws.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ModelChoice, Overrides, RunConfig};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "cpjoint",
    version,
    about = "Change-point joint model of longitudinal and event-time data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub shared: SharedArgs,
}

/// Flags accepted by every command; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub model: Option<ModelChoice>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset from the scenario.
    Simulate,
    /// Fit a model to longitudinal.csv and survival.csv.
    Fit {
        /// Directory holding longitudinal.csv and survival.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Bias / MSE / coverage of the joint and longitudinal-only models.
    Replicate,
    /// Population mean change point and marginal mean curves from draws.
    Summarize {
        /// Draws file written by `fit` (default: <out>/draws.csv).
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Data directory whose survival covariates define the population.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Resolves the configuration: defaults, then the file, then flags.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let s = &cli.shared;
    let mut o = Overrides {
        seed: s.seed,
        out: s.out.clone(),
        model: s.model,
        chains: s.chains,
        warmup: s.warmup,
        samples: s.samples,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Fit { data } => o.data = data.clone(),
        Command::Summarize { draws, data } => {
            o.draws = draws.clone();
            o.data = data.clone();
        }
        Command::Simulate | Command::Replicate => {}
    }
    cfg.apply(&o);
    Ok(cfg)
}

/// Runs the command and returns the files it wrote.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Fit { .. } => commands::cmd_fit(&cfg),
        Command::Replicate => commands::cmd_replicate(&cfg),
        Command::Summarize { .. } => commands::cmd_summarize(&cfg),
    }
}
