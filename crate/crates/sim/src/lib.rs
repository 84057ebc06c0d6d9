//! Cycle-approximate model of a weight-stationary systolic accelerator for
//! MANT: a `32 x 32` array of processing-element groups whose logical row
//! count scales with the weight width, re-quantization units that compute
//! group scales for the next layer, and a DRAM bandwidth floor.
//!
//! The model is analytical and deterministic. Energy figures are in
//! relative units (one 8-bit MAC = 1.0).

pub mod config;
pub mod error;
pub mod model;
pub mod report;
pub mod workload;

pub use config::{ArrayConfig, CostModel};
pub use error::{Result, SimError};
pub use model::{simulate_attention, simulate_gemm, AttentionShape, GemmShape};
pub use report::{ByteBreakdown, CycleBreakdown, EnergyBreakdown, ReportKind, SimReport};
pub use workload::{compare_configs, comparison_to_csv, run_workload, Comparison, ConfigRatio, Layer, Workload, WorkloadReport};
