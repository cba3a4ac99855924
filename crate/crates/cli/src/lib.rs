//! Batch driver for queue-randomized designs: Pareto frontiers, the
//! arrival-endogeneity bias study, propensity convergence checks and
//! single-run estimation, each written as CSV.

pub mod bias;
pub mod config;
pub mod estimate;
pub mod output;
pub mod pareto;
pub mod propensity;
mod sim;

use std::path::Path;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "queuerand", version, about = "Randomized queue-assignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Overrides `execution.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `execution.out_dir`.
    #[arg(long, global = true)]
    pub out: Option<std::path::PathBuf>,
    /// Overrides `execution.threads` (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Variance/utility frontier of optimized and heuristic designs.
    Pareto,
    /// Bias of exogenous vs endogenous estimators under endogenous arrivals.
    Bias,
    /// Monte Carlo propensities and treated mass against their limits.
    CheckPropensity,
    /// Estimates on one realization (simulated or read from a trace).
    Estimate,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.execution.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.execution.out_dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.execution.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `command` on a dedicated thread pool and writes its CSVs.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    let out = cfg.execution.out_dir.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.execution.threads)
        .build()
        .context("cannot start worker threads")?;
    pool.install(|| dispatch(command, cfg, out))
}

fn dispatch(command: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match command {
        Command::Pareto => pareto::run(cfg, out),
        Command::Bias => bias::run(cfg, out),
        Command::CheckPropensity => propensity::run(cfg, out),
        Command::Estimate => estimate::run(cfg, out),
    }
}
