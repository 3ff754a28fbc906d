//! `dfm` — label-shift quantification from the command line.
//!
//! Subcommands: `estimate`, `diagnose`, `benchmark`, `select-bandwidth`.
//! Exit codes: 0 success, 2 malformed input, 3 identifiability failure,
//! 4 solver non-convergence.

mod commands;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dfm", version, about = "Distribution feature matching for label-shift quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate target class proportions from a labeled source and an
    /// unlabeled target CSV.
    Estimate(EstimateArgs),
    /// Report the Gram spectrum, identifiability, and the contamination
    /// decomposition of the target embedding.
    Diagnose(EstimateArgs),
    /// Run the synthetic contamination sweep described by a JSON config and
    /// emit a CSV (plus optional SVG charts).
    Benchmark(BenchmarkArgs),
    /// Evaluate the bandwidth grid and report the Δ_min-maximising σ.
    SelectBandwidth(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Gaussian kernel via random Fourier features.
    Rff,
    /// Exact energy kernel.
    Energy,
    /// One-hot classifier features (BBSE).
    Bbse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Labeled source CSV: feature columns plus a final integer `label` column.
    #[arg(long)]
    source: PathBuf,
    /// Target CSV: feature columns only (a `label` column is ignored).
    #[arg(long)]
    target: PathBuf,
    /// Predictions for the source rows (single-column CSV), BBSE only.
    #[arg(long)]
    predictions_source: Option<PathBuf>,
    /// Predictions for the target rows (single-column CSV), BBSE only.
    #[arg(long)]
    predictions_target: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Rff)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Random Fourier feature count D (even).
    #[arg(long = "features", default_value_t = 2048)]
    features: usize,
    /// Fixed kernel bandwidth; mutually exclusive with --auto-sigma.
    #[arg(long, conflicts_with = "auto_sigma")]
    sigma: Option<f64>,
    /// Select σ by maximising Δ_min over the default grid (the default
    /// behaviour when --sigma is absent).
    #[arg(long)]
    auto_sigma: bool,
    /// Confidence parameter of the error certificate.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solver tolerance on the projected-gradient residual.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Worker threads (default: all cores; env DFM_THREADS as fallback).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the report as JSON instead of key-value text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// JSON sweep config (methods, noise kinds, eps grid, dims, reps, seed, …).
    config: PathBuf,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one SVG chart per noise kind next to --out.
    #[arg(long, requires = "out")]
    svg: bool,
    #[arg(long)]
    threads: Option<usize>,
}

/// An error carrying its process exit code.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<dfm_core::DfmError> for Failure {
    fn from(e: dfm_core::DfmError) -> Self {
        let code = match e {
            dfm_core::DfmError::Identifiability { .. } => 3,
            _ => 2,
        };
        Failure::new(code, e.to_string())
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("DFM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .filter(|&t| t > 0)
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(2, format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => commands::estimate(&args),
        Command::Diagnose(args) => commands::diagnose(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
        Command::SelectBandwidth(args) => commands::select_bandwidth_cmd(&args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
