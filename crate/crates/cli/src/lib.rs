//! Command-line harness around `mocap-core`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mocap_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_EVAL_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mocap", version, about = "Multi-person 3D motion capture on simulated scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for per-person and per-sequence parallelism.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Byte-identical outputs: wall-clock timings are left out of files.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a scene and its ground truth.
    Simulate,
    /// Train the Stage II pose decoder.
    TrainDecoder,
    /// Run the full pipeline on a simulated scene.
    Run,
    /// Score predictions against ground truth.
    Eval,
    /// SelecSLS and ResNet-50 shape, parameter, FLOP and memory report.
    NetReport,
    /// Per-stage timings over a sweep of person counts.
    Bench,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        Error::EvalMismatch(_) => EXIT_EVAL_MISMATCH,
        _ => EXIT_FAILURE,
    }
}

/// Runs one subcommand and returns its console summary.
pub fn execute(cmd: Command, g: &GlobalArgs) -> Result<String, Error> {
    let config = config::RunConfig::load(g.config.as_deref())?.with_overrides(g.seed, g.out.clone());
    let ctx = commands::Context::new(config, g.deterministic)?;
    match cmd {
        Command::Simulate => commands::simulate::simulate(&ctx),
        Command::TrainDecoder => commands::train::train_decoder(&ctx),
        Command::Run => commands::run::run(&ctx),
        Command::Eval => commands::eval::eval(&ctx),
        Command::NetReport => commands::net_report::net_report(&ctx),
        Command::Bench => commands::bench::bench(&ctx),
    }
}
