//! `softpose` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "softpose", version, about = "Orientation soft classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample poses inside a camera frustum and write JSONL labels.
    Gen(GenArgs),
    /// Orientation grid utilities.
    Grid {
        #[command(subcommand)]
        action: GridAction,
    },
    /// Encode a label quaternion into bin activations.
    Encode(CodecArgs),
    /// Decode bin activations into a quaternion.
    Decode(CodecArgs),
    /// `codec encode` / `codec decode`.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Fit a mixture of orientation modes to bin activations.
    Emfit(EmfitArgs),
    /// Rotation warps and appearance perturbation of a labeled image set.
    Augment(AugmentArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate the linear toy head on a symmetric body.
    Traintoy(TrainToyArgs),
}

#[derive(Debug, Subcommand)]
enum GridAction {
    /// Write the bins as CSV (index,w,x,y,z).
    Dump(GridDumpArgs),
}

#[derive(Debug, Subcommand)]
enum CodecAction {
    Encode(CodecArgs),
    Decode(CodecArgs),
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    /// Bins per Euler dimension.
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Merge tolerance in normalized distance (default 0.2 * 2 / M).
    #[arg(long = "merge-tol")]
    merge_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct GridDumpArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CodecArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Kernel width in bins.
    #[arg(long, default_value_t = 6.0)]
    delta: f64,
    /// Input JSON file (stdin when absent).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long = "min-range", default_value_t = 10.0)]
    min_range: f64,
    #[arg(long = "max-range", default_value_t = 40.0)]
    max_range: f64,
    #[arg(long = "margin-px", default_value_t = 32.0)]
    margin_px: f64,
    #[arg(long, default_value_t = 1920)]
    width: u32,
    #[arg(long, default_value_t = 1200)]
    height: u32,
    #[arg(long = "hfov-deg", default_value_t = 90.0)]
    hfov_deg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmfitArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 6.0)]
    delta: f64,
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    #[arg(long = "ll-threshold")]
    ll_threshold: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long = "in-dir")]
    in_dir: PathBuf,
    /// JSONL labels; image paths are relative to --in-dir (`<id>.png` when absent).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long = "max-rot-deg", default_value_t = 10.0)]
    max_rot_deg: f64,
    /// Flat JSON object of appearance ranges; no appearance change when absent.
    #[arg(long)]
    sim2real: Option<PathBuf>,
    #[arg(long = "hfov-deg", default_value_t = 90.0)]
    hfov_deg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated range bin edges in meters.
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50")]
    edges: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 2)]
    symmetry: usize,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long = "test-count", default_value_t = 500)]
    test_count: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 6.0)]
    delta: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "bin-width-deg", default_value_t = 5.0)]
    bin_width_deg: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
