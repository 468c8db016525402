//! Command-line front end: station-file ingestion, TOML configuration and
//! the `fit`, `bootstrap`, `predict`, `simulate` and `benchmark` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod mask;
pub mod station;
pub mod wind;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Outputs;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "cnr", version, about = "Regression with spatially misaligned covariates")]
pub struct Cli {
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only report errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the covariate field and the mixed model.
    Fit(ConfigArg),
    /// Fit, then run the configured bootstrap variant.
    Bootstrap(ConfigArg),
    /// Cokrige the covariates over a regular grid.
    Predict(ConfigArg),
    /// Write one synthetic dataset from the scenario.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Which replication of the scenario to write.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Run the scenario and write the metrics table.
    Benchmark(ConfigArg),
}

#[derive(Debug, clap::Args)]
pub struct ConfigArg {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Bootstrap(_) => "bootstrap",
            Command::Predict(_) => "predict",
            Command::Simulate { .. } => "simulate",
            Command::Benchmark(_) => "benchmark",
        }
    }

    fn config_path(&self) -> &PathBuf {
        match self {
            Command::Fit(c) | Command::Bootstrap(c) | Command::Predict(c) | Command::Benchmark(c) => &c.config,
            Command::Simulate { config, .. } => &config.config,
        }
    }
}

/// Files a command reads besides its config.
fn inputs<'a>(command: &Command, cfg: &'a RunConfig) -> Vec<&'a std::path::Path> {
    let mut out = Vec::new();
    let Some(d) = &cfg.data else { return out };
    match command {
        Command::Fit(_) | Command::Bootstrap(_) => out.push(d.response.as_path()),
        Command::Predict(_) => {}
        Command::Simulate { .. } | Command::Benchmark(_) => return out,
    }
    out.push(d.covariates.as_path());
    out.extend(d.hourly_wind.as_deref());
    if let (Command::Predict(_), Some(p)) = (command, &cfg.predict) {
        out.extend(p.mask.as_deref());
    }
    out
}

/// Runs one command and writes its manifest; returns the output directory.
pub fn execute(command: &Command) -> CliResult<PathBuf> {
    let (cfg, bytes) = RunConfig::load(command.config_path())?;
    let mut out = Outputs::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new(command.name(), &bytes, cfg.seed);
    match command {
        Command::Fit(_) => commands::fit(&cfg, &mut out)?,
        Command::Bootstrap(_) => commands::run_bootstrap(&cfg, &mut out)?,
        Command::Predict(_) => commands::predict(&cfg, &mut out)?,
        Command::Simulate { replicate, .. } => commands::simulate(&cfg, *replicate, &mut out)?,
        Command::Benchmark(_) => commands::benchmark(&cfg, &mut out)?,
    }
    for path in inputs(command, &cfg) {
        manifest.add_input(path)?;
    }
    manifest.add_outputs(out.dir(), out.written())?;
    manifest.write(out.dir())?;
    Ok(cfg.output_dir)
}
