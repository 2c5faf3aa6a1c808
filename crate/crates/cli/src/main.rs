//! `callo`: batch command-line front end for preprocessing, training,
//! evaluation, nearest-neighbour baselines and interpretation.

mod data;
mod inspect;
mod knn;
mod model;
mod preprocess;
mod report;
mod run;
mod train;

use std::process::ExitCode;

use callo::{Error, ErrorKind, Result};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "callo", version, about = "Right-whale recognition toolkit")]
struct Cli {
    /// Seed for every randomized step
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads (1 guarantees bit-reproducible results)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment, derotate and crop photos into passport images
    Preprocess(preprocess::PreprocessArgs),
    /// Train a network and write a checkpoint with its history
    Train(train::TrainArgs),
    /// Score a checkpoint: accuracy and confusion matrix
    Eval(train::EvalArgs),
    /// kNN baselines on raw, PCA and PCA+LDA features
    Knn(knn::KnnArgs),
    /// Occlusion saliency map for one image
    Saliency(inspect::SaliencyArgs),
    /// Per-layer activation dumps and dead-neuron report
    Activations(inspect::ActivationsArgs),
    /// Summarize the artifacts of an earlier run directory
    Report(report::ReportArgs),
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub seed: u64,
    pub threads: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::User => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let ctx = Context {
        seed: cli.seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Preprocess(a) => preprocess::run(&a, ctx),
        Command::Train(a) => train::run_train(&a, ctx),
        Command::Eval(a) => train::run_eval(&a, ctx),
        Command::Knn(a) => knn::run(&a, ctx),
        Command::Saliency(a) => inspect::run_saliency(&a, ctx),
        Command::Activations(a) => inspect::run_activations(&a, ctx),
        Command::Report(a) => report::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
