//! `mant`: quantize tensors, verify the fused GEMM, run the toy KV-cache
//! pipeline and drive the accelerator model.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mant_core::framework::KvPrecision;
use mant_core::grid::CurveKind;
use mant_core::synth::ValueDistribution;

#[derive(Parser, Debug)]
#[command(name = "mant", version, about = "MANT 4-bit quantization toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Elements per quantization group.
    #[arg(long, global = true, default_value_t = 64)]
    pub group_size: usize,
    /// Comma-separated coefficients; add `int` for the INT4 option.
    #[arg(long, global = true)]
    pub candidates: Option<String>,
    /// Tail clipping of the NF reference curve.
    #[arg(long, global = true, default_value_t = mant_core::grid::DEFAULT_NF_EPSILON)]
    pub epsilon: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when omitted (binary outputs require it).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Activation,
    Kv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Mse,
    Max,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the grid coefficient to a reference data type.
    FitGrid {
        #[arg(long, value_parser = parse_curve)]
        kind: CurveKind,
        #[arg(long, value_enum, default_value_t = Metric::Mae)]
        metric: Metric,
    },
    /// Write a seeded random float tensor.
    GenTensor {
        /// Comma-separated dimensions, e.g. 128,256.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, value_parser = parse_dist, default_value = "gaussian")]
        dist: ValueDistribution,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Quantize a float tensor into a container and report error statistics.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        role: Role,
        /// Grouping axis; defaults to 0 for weights and the last axis otherwise.
        #[arg(long)]
        axis: Option<usize>,
        /// Calibration activations (R x K) for weight selection.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Variance tables for the kv role (output of `calibrate`).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Where to write the statistics JSON; printed to stdout when omitted.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Decode a quantized container back to a float tensor.
    Dequantize {
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare the fused integer GEMM with the dequantized reference.
    GemmCheck {
        /// Quantized activations (M x K, INT8 along axis 1).
        #[arg(long, requires = "w", conflicts_with = "random")]
        x: Option<PathBuf>,
        /// Quantized weights (K x N, 4-bit along axis 0).
        #[arg(long, requires = "x")]
        w: Option<PathBuf>,
        /// Generate a seeded M,K,N problem instead of reading files.
        #[arg(long, value_delimiter = ',')]
        random: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
    },
    /// Run the toy attention pipeline over a quantized KV cache.
    KvRun {
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        head_dim: usize,
        #[arg(long, default_value_t = 192)]
        prefill: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, value_parser = parse_precision, default_value = "mant4")]
        precision: KvPrecision,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Minimum per-step cosine similarity; exit code 1 below it.
        #[arg(long, default_value_t = 0.99)]
        threshold: f64,
    },
    /// Calibrate K and V variance tables.
    Calibrate {
        /// A KV-like S x d tensor; a synthetic stream is used when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        min_samples: usize,
        /// Calibration groups per table for the synthetic stream.
        #[arg(long, default_value_t = 2048)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        head_dim: usize,
    },
    /// Simulate a workload on one or more accelerator configurations.
    Sim {
        #[arg(long)]
        workload: PathBuf,
        /// Array configuration JSON; repeat to compare (first is the baseline).
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        /// Energy coefficients JSON.
        #[arg(long)]
        cost: Option<PathBuf>,
    },
}

fn parse_curve(s: &str) -> Result<CurveKind, String> {
    s.parse().map_err(|e: mant_core::MantError| e.to_string())
}

fn parse_dist(s: &str) -> Result<ValueDistribution, String> {
    s.parse().map_err(|e: mant_core::MantError| e.to_string())
}

fn parse_precision(s: &str) -> Result<KvPrecision, String> {
    s.parse().map_err(|e: mant_core::MantError| e.to_string())
}

/// A check ran to completion and its result is below the required bar.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MANT_LOG")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::FitGrid { kind, metric } => commands::fit_grid(g, kind, metric),
        Command::GenTensor { dims, dist, scale } => commands::gen_tensor(g, &dims, dist, scale),
        Command::Quantize {
            input,
            role,
            axis,
            calib,
            table,
            stats,
        } => commands::quantize(g, &input, role, axis, calib.as_deref(), table.as_deref(), stats.as_deref()),
        Command::Dequantize { input } => commands::dequantize(g, &input),
        Command::GemmCheck { x, w, random, threshold } => {
            commands::gemm_check(g, x.as_deref(), w.as_deref(), random.as_deref(), threshold)
        }
        Command::KvRun {
            heads,
            head_dim,
            prefill,
            steps,
            precision,
            table,
            threshold,
        } => commands::kv_run(
            g,
            commands::KvRunArgs {
                heads,
                head_dim,
                prefill,
                steps,
                precision,
                table,
                threshold,
            },
        ),
        Command::Calibrate {
            input,
            min_samples,
            groups,
            heads,
            head_dim,
        } => commands::calibrate(g, input.as_deref(), min_samples, groups, heads, head_dim),
        Command::Sim {
            workload,
            configs,
            cost,
        } => commands::sim(g, &workload, &configs, cost.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<VerificationFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
