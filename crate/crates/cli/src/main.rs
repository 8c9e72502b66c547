mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use clarion_core::Error;

/// Interactive classification with clarification questions.
#[derive(Parser, Debug)]
#[command(name = "clarion", version, about)]
pub struct Cli {
    /// TOML file with default flag values (flags and environment win).
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true, env = "CLARION_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for episode rollouts.
    #[arg(long, global = true, env = "CLARION_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with known attribute codes.
    Synth(commands::SynthArgs),
    /// Pre-train the text encoder on the training split.
    TrainEncoder(commands::TrainEncoderArgs),
    /// Count annotated answers for the response model.
    FitResponses(commands::FitResponsesArgs),
    /// Fit the user simulator on one split.
    FitSimulator(commands::FitSimulatorArgs),
    /// Train the stop/ask controller with REINFORCE.
    TrainPolicy(commands::TrainPolicyArgs),
    /// Run the evaluation suite against the simulator.
    Eval(commands::EvalArgs),
    /// Accuracy against mean turns for fixed, threshold and policy stopping.
    Curve(commands::CurveArgs),
    /// Serve the HTTP session API.
    Serve(commands::ServeArgs),
    /// Run one interaction in the terminal.
    Interact(commands::InteractArgs),
}

/// Paths of the trained models an engine is built from.
#[derive(Args, Debug, Clone)]
pub struct ModelPaths {
    /// Corpus directory.
    #[arg(long, env = "CLARION_CORPUS")]
    corpus: PathBuf,
    /// Encoder checkpoint.
    #[arg(long, env = "CLARION_ENCODER")]
    encoder: PathBuf,
    /// Response counts written by `fit-responses`.
    #[arg(long, env = "CLARION_RESPONSES")]
    responses: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => 1,
                Error::Io { .. }
                | Error::Data { .. }
                | Error::Corpus(_)
                | Error::Checkpoint { .. }
                | Error::DataLeak(_) => 2,
                Error::Simulator(_) => 2,
                _ => 3,
            },
            CliError::Runtime(_) => 3,
        }
    }
}

fn run() -> Result<(), CliError> {
    let args = config::merge(std::env::args_os().collect(), &Cli::command())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let global = commands::Global { seed: cli.seed, jobs: cli.jobs.max(1) };
    match cli.command {
        Command::Synth(a) => commands::synth(&a, &global),
        Command::TrainEncoder(a) => commands::train_encoder(&a, &global),
        Command::FitResponses(a) => commands::fit_responses(&a),
        Command::FitSimulator(a) => commands::fit_simulator(&a),
        Command::TrainPolicy(a) => commands::train_policy(&a, &global),
        Command::Eval(a) => commands::eval(&a, &global),
        Command::Curve(a) => commands::curve(&a, &global),
        Command::Serve(a) => commands::serve(&a, &global),
        Command::Interact(a) => commands::interact(&a, &global),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) if msg.starts_with("error:") => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
