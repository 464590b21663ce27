use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kronsep::{Error, ProductOrientation};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "kronsep", version, about = "Separability measures and inference for space-time covariance operators")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measures, confidence intervals and relevance tests for a data set or an operator.
    Measure(MeasureArgs),
    /// Tabulate quantiles of the limiting pivot by simulation.
    Pivot(PivotArgs),
    /// Draw a synthetic data set, or tabulate the oracle measure curve in c.
    Simulate(SimulateArgs),
    /// Empirical coverage of the confidence intervals on synthetic data.
    Coverage(CoverageArgs),
    /// Fourier-smooth and detrend raw daily series.
    Preprocess(PreprocessArgs),
}

#[derive(Args, Debug, Default)]
pub struct PivotFlags {
    /// Number of simulated pivot paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Grid steps per path (rounded up to a multiple of K).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for cached pivot tables.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Long-form sample CSV with a `.grid.json` sidecar.
    #[arg(long, conflicts_with = "operator")]
    pub data: Option<PathBuf>,
    /// Operator CSV; measures only, no inference.
    #[arg(long)]
    pub operator: Option<PathBuf>,
    /// Report only the relative measures.
    #[arg(long, conflicts_with = "absolute_only")]
    pub relative_only: bool,
    /// Report only the absolute measures.
    #[arg(long)]
    pub absolute_only: bool,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub delta_rel: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub orientation: Option<ProductOrientation>,
    #[command(flatten)]
    pub pivot: PivotFlags,
    /// Output JSON file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PivotArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probabilities to tabulate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub probs: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long = "S")]
    pub s: Option<usize>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    /// `grid_coords` or `index_coords`.
    #[arg(long)]
    pub coords: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the oracle measure curve over these c values instead of data.
    #[arg(long, value_delimiter = ',')]
    pub curve: Option<Vec<f64>>,
    #[arg(long)]
    pub orientation: Option<ProductOrientation>,
    /// Output CSV (a `.grid.json` sidecar is written next to data sets).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub orientation: Option<ProductOrientation>,
    #[command(flatten)]
    pub pivot: PivotFlags,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Raw long-form CSV with day as `time_index`.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_coeff: Option<usize>,
    #[arg(long = "T-out")]
    pub t_out: Option<usize>,
    /// Skip the per-cell linear detrending (the output is centered instead).
    #[arg(long)]
    pub no_detrend: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Degenerate(_) => 2,
        Error::Convergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Measure(a) => commands::measure(a),
        Command::Pivot(a) => commands::pivot(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Coverage(a) => commands::coverage(a),
        Command::Preprocess(a) => commands::preprocess(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
