//! `geonca`: synthesize datasets, train, evaluate, export rollouts and serve live sessions.

mod cmd_eval;
mod cmd_grow;
mod cmd_serve;
mod cmd_synth;
mod cmd_train;
mod common;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(name = "geonca", version, about = "Neural cellular automata for traffic-condition maps")]
struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel work; results do not depend on it. Defaults to the hardware count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(cmd_synth::SynthArgs),
    /// Train a model, or resume training from a checkpoint.
    Train(cmd_train::TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(cmd_eval::EvalArgs),
    /// Run one rollout and export its frames as PNGs.
    Grow(cmd_grow::GrowArgs),
    /// Serve live sessions over HTTP and WebSocket.
    Serve(cmd_serve::ServeArgs),
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    builder.build_global().map_err(usage)
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth::run(a, cfg),
        Command::Train(a) => cmd_train::run(a, cfg),
        Command::Eval(a) => cmd_eval::run(a, cfg),
        Command::Grow(a) => cmd_grow::run(a, cfg),
        Command::Serve(a) => cmd_serve::run(a, cfg, cli.threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
