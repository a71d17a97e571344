//! Command-line front end: configuration, orchestration and artifacts.

pub mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Preset};

use crate::evalkit::EvalError;
use crate::hetgraph::GraphError;
use crate::training::{Task, TrainError};

#[derive(Debug, Parser)]
#[command(name = "brgcn", version, about = "Relational graph attention for node classification and link prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train node classification, one run per seed.
    TrainNc(ConfigArgs),
    /// Train link prediction, one run per seed.
    TrainLp(ConfigArgs),
    /// Evaluate a checkpoint on the configured split.
    Eval(ConfigArgs),
    /// Relation ablation by attention ranking.
    Ablate(ConfigArgs),
    /// Write the attention weights of a checkpoint as JSON.
    ExportAttention(ConfigArgs),
    /// Print the resolved config, or every error found.
    Validate(ConfigArgs),
    /// List the config keys.
    Keys,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Config(m) => CliError::config(m),
            e => CliError::Other(e.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            e => CliError::Other(e.into()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Split(m) => CliError::config(format!("split: {}", m)),
            e => CliError::Other(e.into()),
        }
    }
}

fn load(args: &ConfigArgs, task: Option<Task>) -> Result<ExperimentConfig, CliError> {
    let entries = config::gather(args.config.as_deref(), &args.sets).map_err(CliError::Config)?;
    config::resolve(&entries, task).map_err(CliError::Config)
}

/// Runs one subcommand.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainNc(a) => run::train_nc(&load(&a, Some(Task::NodeClassification))?),
        Command::TrainLp(a) => run::train_lp(&load(&a, Some(Task::LinkPrediction))?),
        Command::Eval(a) => run::eval(&load(&a, None)?),
        Command::Ablate(a) => run::ablate(&load(&a, Some(Task::NodeClassification))?),
        Command::ExportAttention(a) => run::export_attention(&load(&a, None)?),
        Command::Validate(a) => {
            print!("{}", load(&a, None)?.to_text());
            Ok(())
        }
        Command::Keys => {
            print!("{}", config::key_docs());
            Ok(())
        }
    }
}

/// Parses `std::env::args`, runs, and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
