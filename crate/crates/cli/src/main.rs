//! `specdistill` command-line driver.
//!
//! Stages share one run directory:
//!
//! ```text
//! run/
//!   config.toml          effective configuration
//!   corpus/              vocab.txt, train.tsv, dev.tsv
//!   iter_01 .. iter_NN/  model.ckpt, frequent.tsv, removed_ids.txt, kept_ids.txt, round.json
//!   distill.done
//!   evaluator/           human_vs_machine.ckpt, machine_vs_random_*.ckpt, metrics.json, done.json
//!   policy/              policy.ckpt, metrics.json, done.json
//!   report/              iterations.tsv, adversarial.tsv, selection.tsv
//! ```
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 saturated run.

mod config;
mod stages;

use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use specdistill::seq2seq::DecodeStrategy;

use config::RunConfig;
use stages::Status;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "specdistill", version, about = "Iterative data distillation for dialogue response specificity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model pool by iterative distillation.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        /// Rerun even if the stage already finished (discards downstream stages).
        #[arg(long)]
        force: bool,
    },
    /// Train the human-vs-machine evaluator and the decoding-strategy evaluators.
    TrainEvaluator {
        #[arg(long)]
        run_dir: PathBuf,
        /// Overrides the configuration stored in the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train the model-selection policy against the evaluator.
    TrainPolicy {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Answer input lines (file or stdin) with `index<TAB>response`.
    Respond {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// greedy | sample | stochastic-greedy
        #[arg(long)]
        strategy: Option<String>,
        /// Candidate count for stochastic-greedy.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write and print the iteration, decoding-strategy and selection reports.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn stage_config(run_dir: &Path, override_path: Option<&Path>) -> anyhow::Result<RunConfig> {
    stages::require_run_dir(run_dir)?;
    match override_path {
        Some(p) => RunConfig::load(p),
        None => stages::run_config(run_dir),
    }
}

fn parse_strategy(name: &str, k: Option<usize>, fallback: DecodeStrategy) -> Result<DecodeStrategy, ConfigError> {
    let default_k = match fallback {
        DecodeStrategy::StochasticGreedy { k } => k,
        _ => specdistill::seq2seq::sampling::DEFAULT_TOP_K,
    };
    match name {
        "greedy" => Ok(DecodeStrategy::Greedy),
        "sample" => Ok(DecodeStrategy::Sample),
        "stochastic-greedy" => match k.unwrap_or(default_k) {
            0 => Err(ConfigError("k must be positive".into())),
            k => Ok(DecodeStrategy::StochasticGreedy { k }),
        },
        other => Err(ConfigError(format!("unknown strategy `{other}`"))),
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Distill { config, run_dir, force } => {
            let config = RunConfig::load(&config)?;
            stages::distill(&config, &run_dir, force)
        }
        Command::TrainEvaluator { run_dir, config, force } => {
            let config = stage_config(&run_dir, config.as_deref())?;
            stages::train_evaluators(&config, &run_dir, force)
        }
        Command::TrainPolicy { run_dir, config, force } => {
            let config = stage_config(&run_dir, config.as_deref())?;
            stages::train_policy(&config, &run_dir, force)
        }
        Command::Respond { run_dir, input, strategy, k, seed } => {
            let config = stage_config(&run_dir, None)?;
            let strategy = match strategy {
                Some(name) => parse_strategy(&name, k, config.decode)?,
                None => config.decode,
            };
            let seed = seed.unwrap_or(config.seed);
            let stdout = io::stdout().lock();
            match input {
                Some(p) => stages::respond(&run_dir, strategy, seed, BufReader::new(File::open(&p)?), stdout)?,
                None => stages::respond(&run_dir, strategy, seed, io::stdin().lock(), stdout)?,
            }
            Ok(Status::Done)
        }
        Command::Report { run_dir } => {
            stages::require_run_dir(&run_dir)?;
            stages::report(&run_dir, io::stdout().lock())?;
            Ok(Status::Done)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config_error = err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || matches!(e.downcast_ref::<specdistill::Error>(), Some(specdistill::Error::Config(_)))
    });
    if config_error {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Saturated) => ExitCode::from(3),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
