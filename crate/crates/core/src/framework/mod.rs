//! Quantization framework: offline weight-type selection, variance-based
//! KV-cache selection, the streaming V window and a toy attention harness.

pub mod attention;
pub mod kv_cache;
pub mod selection;
pub mod variance;
pub mod window;

use serde::{Deserialize, Serialize};

use crate::codec::{GroupMeta, MantCode};

pub use attention::{
    calibrate_tables, run_toy_attention, AttentionConfig, AttentionReport, AttentionTables, StepReport,
};
pub use kv_cache::{quantize_k_step, HeadCache, KvConfig, KvGroup, KvPrecision};
pub use selection::{
    output_error, quantize_weight_matrix, select_weight_coefficient, Calibration, CandidateSet, Selection,
    DEFAULT_COEFFICIENTS,
};
pub use variance::{
    best_coefficient, build_variance_table, calibrate_variance_curve, normalized_variance, select_by_variance,
    select_from_stats, CurvePoint, RunningStats, VarianceRange, VarianceTable,
};
pub use window::ProcessWindow;

/// A 4-bit group with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGroup {
    pub codes: Vec<MantCode>,
    pub meta: GroupMeta,
}

impl From<(Vec<MantCode>, GroupMeta)> for EncodedGroup {
    fn from((codes, meta): (Vec<MantCode>, GroupMeta)) -> Self {
        Self { codes, meta }
    }
}

/// Settings recorded alongside calibrated variance tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub group_size: usize,
    pub candidates: Vec<u8>,
    pub min_samples: usize,
    pub epsilon: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            group_size: 64,
            candidates: DEFAULT_COEFFICIENTS.to_vec(),
            min_samples: 32,
            epsilon: crate::grid::DEFAULT_NF_EPSILON,
        }
    }
}
