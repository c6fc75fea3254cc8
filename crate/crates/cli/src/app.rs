//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::ExperimentConfig;
use crate::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "ugnn", version, about = "Unfolded GNN domain adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the seed list with `seed, seed+1, ...` of the same length.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic domain pairs to disk.
    Generate(Common),
    /// Train one model and save its checkpoint and report.
    Train(Common),
    /// Vanilla, +MMD, and +CP arms for every pair and variant.
    GdaRun(Common),
    /// Normalized lower-level objective per (train, evaluation) domain.
    ObjectiveTable(Common),
    /// Randomized check that cascading never raises the objective.
    TheoremCheck(Common),
    /// Sweep the MMD weight.
    Sensitivity(Common),
    /// Finite-difference verification of every gradient.
    Gradcheck(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Self::Generate(c)
            | Self::Train(c)
            | Self::GdaRun(c)
            | Self::ObjectiveTable(c)
            | Self::TheoremCheck(c)
            | Self::Sensitivity(c)
            | Self::Gradcheck(c) => c,
        }
    }
}

/// Loads the configuration and applies the command-line overrides.
pub fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `command` on a pool of `--threads` workers.
pub fn run(command: &Command) -> Result<String> {
    let common = command.common();
    if common.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let cfg = resolve(common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match command {
        Command::Generate(_) => commands::generate(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::GdaRun(_) => commands::gda_run(&cfg),
        Command::ObjectiveTable(_) => commands::objective_table_cmd(&cfg),
        Command::TheoremCheck(_) => commands::theorem_check_cmd(&cfg),
        Command::Sensitivity(_) => commands::sensitivity_cmd(&cfg),
        Command::Gradcheck(_) => commands::gradcheck_cmd(&cfg),
    })
}
