//! `drdetect`: train a small classifier, attack it, detect adversarial
//! batches through density ratio estimates, and craft batches that stay
//! within a detection tolerance.

mod commands;
mod config;
mod data;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{attack, craft, detect, synth, train};
use failure::{usage, CmdResult};

#[derive(Debug, Parser)]
#[command(name = "drdetect", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Master seed [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file of command parameters; flags take precedence over it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Leave the timestamp out of JSON outputs
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the MLP classifier
    Train(train::TrainArgs),
    /// Generate an adversarial copy of a dataset
    Attack(attack::AttackArgs),
    /// Decide whether a suspect batch is adversarial relative to real data
    Detect(detect::DetectArgs),
    /// Craft an FGSM batch whose ratio gap stays within a tolerance
    Craft(craft::CraftArgs),
    /// Check the ratio estimator against Gaussian shifts with a closed form
    Synth(synth::SynthArgs),
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    match &cli.command {
        Command::Train(args) => train::run(args, &cli.common),
        Command::Attack(args) => attack::run(args, &cli.common),
        Command::Detect(args) => detect::run(args, &cli.common),
        Command::Craft(args) => craft::run(args, &cli.common),
        Command::Synth(args) => synth::run(args, &cli.common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("drdetect: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
