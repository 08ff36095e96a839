//! `acvae`: corpus preparation, training and conversion from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, CONFIG_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] acvae_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) | CliError::Core(acvae_core::Error::NonFinite { .. }) => 3,
            CliError::Config(_) | CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "acvae",
    version,
    about = "Non-parallel voice conversion with an auxiliary-classifier conditional VAE"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration (defaults to $ACVAE_CONFIG, then built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan a corpus, split it and compute normalization and F0 statistics.
    Manifest(commands::ManifestArgs),
    /// Analyze every manifest file into the feature cache.
    ExtractFeatures(commands::ExtractArgs),
    /// Train a model on cached features.
    Train(commands::TrainArgs),
    /// Convert one utterance from a source to a target speaker.
    Convert(commands::ConvertArgs),
    /// Print auxiliary-classifier speaker posteriors for an utterance.
    Classify(commands::ClassifyArgs),
    /// Check analytic gradients of the training loss against finite differences.
    Gradcheck(commands::GradcheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    match cli.command {
        Command::Manifest(a) => commands::manifest(cfg, a),
        Command::ExtractFeatures(a) => commands::extract(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Convert(a) => commands::convert(cfg, a),
        Command::Classify(a) => commands::classify(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
