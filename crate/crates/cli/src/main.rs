use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kws_ode::checkpoint::CheckpointError;
use kws_ode::dataset::{DatasetError, Split};
use kws_ode::models::{ModelError, Variant};
use kws_ode::train::{BnMode, TrainError};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "kws-ode", version, about = "Neural-ODE keyword spotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus in the Speech Commands v0.01 layout.
    Synth(SynthArgs),
    /// Validate a dataset directory and print split statistics.
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint plus metrics CSVs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Print the per-layer parameter and multiply counts of a variant.
    Count(CountArgs),
    /// Evaluate a checkpoint over a list of tolerances or batch sizes.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    speakers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    noise_seconds: usize,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Comma-separated keywords kept as classes; the rest become unknown.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<String>>,
    /// Seed for unknown subsampling and silence crops.
    #[arg(long, default_value_t = 0)]
    index_seed: u64,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    model: Variant,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BnArg {
    Lbn,
    Naive,
}

impl From<BnArg> for BnMode {
    fn from(b: BnArg) -> Self {
        match b {
            BnArg::Lbn => BnMode::Lbn,
            BnArg::Naive => BnMode::Naive,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    split: SplitArg,
    /// Solver tolerance; defaults to the variant's inference tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "lbn")]
    bn: BnArg,
    /// Append the result as a CSV row (header written if the file is new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[arg(long, value_parser = parse_variant)]
    model: Variant,
    #[arg(long, default_value_t = 0)]
    nfe: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    Tolerance,
    Batch,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Tolerance for the batch axis; defaults to the variant's.
    #[arg(long)]
    tol: Option<f64>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ModelError| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("{e} (expected one of {})", names.join(", "))
    })
}

/// Input and format problems exit with 2, everything else with 1.
fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return matches!(e, CheckpointError::Corrupt { .. });
        }
        let dataset = |e: &DatasetError| matches!(e, DatasetError::Layout(_) | DatasetError::Config(_));
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return dataset(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) => true,
                TrainError::Dataset(d) => dataset(d),
                _ => false,
            };
        }
        cause.downcast_ref::<commands::UsageError>().is_some()
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Count(a) => commands::count(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage_error(&err) { 2 } else { 1 })
        }
    }
}
