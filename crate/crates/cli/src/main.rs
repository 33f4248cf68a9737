//! `cylseg`: phantom generation, transform preview, pool building, training,
//! segmentation, evaluation and benchmarking from the command line.
//!
//! Every subcommand reads and writes plain files, accepts `--config <json>`
//! (keys are flag names; explicit flags win) and records its resolved
//! arguments in `<out>.run.json`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use commands::{BenchArgs, EvaluateArgs, SampleArgs, SegmentArgs, SynthArgs, TrainArgs, TransformArgs};

#[derive(Parser, Debug)]
#[command(
    name = "cylseg",
    version,
    about = "Cylindrical-transform sampling and per-voxel segmentation"
)]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, env = "CYLSEG_THREADS", default_value_t = 0)]
    threads: usize,

    /// JSON object of flag values (keys are flag names); explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a labelled phantom volume from a JSON description.
    Synth(SynthArgs),
    /// Write the cylindrical transform image of one pole.
    Transform(TransformArgs),
    /// Draw poles per class and slice and build a training pool.
    Sample(SampleArgs),
    /// Train the baseline classifier on one or more pools.
    Train(TrainArgs),
    /// Label every voxel of a volume with a trained model.
    Segment(SegmentArgs),
    /// Compare a predicted mask with ground truth.
    Evaluate(EvaluateArgs),
    /// Time inference with a shared offset table against per-pole rebuilds.
    Bench(BenchArgs),
}

pub struct RunContext {
    pub threads: usize,
}

fn resolve<A: Serialize + DeserializeOwned>(
    args: &A,
    matches: &clap::ArgMatches,
    file: &Map<String, Value>,
) -> Result<A> {
    config::merge(args, matches, file)
}

fn run(argv: impl IntoIterator<Item = OsString>) -> Result<()> {
    let matches = Cli::command().get_matches_from(argv);
    let cli = Cli::from_arg_matches(&matches)?;
    let file = match &cli.config {
        Some(path) => config::load_file(path)?,
        None => Map::new(),
    };
    let threads = config::resolve_threads(cli.threads, &matches, &file)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting worker threads")?;
    }
    let ctx = RunContext { threads };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Synth(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Transform(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Sample(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Train(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Segment(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Evaluate(a) => resolve(a, sub, &file)?.run(&ctx),
        Command::Bench(a) => resolve(a, sub, &file)?.run(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
