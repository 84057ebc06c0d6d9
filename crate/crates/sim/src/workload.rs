//! Multi-layer workloads, configuration comparison and report output.

use serde::{Deserialize, Serialize};

use crate::config::{ArrayConfig, CostModel};
use crate::error::{Result, SimError};
use crate::model::{simulate_attention, simulate_gemm, AttentionShape, GemmShape};
use crate::report::{ReportKind, SimReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Gemm {
        #[serde(default)]
        name: String,
        m: u64,
        k: u64,
        n: u64,
    },
    Attention {
        #[serde(default)]
        name: String,
        seq_len: u64,
        heads: u64,
        head_dim: u64,
    },
}

impl Layer {
    fn label(&self, index: usize) -> String {
        let (name, kind) = match self {
            Layer::Gemm { name, .. } => (name, "gemm"),
            Layer::Attention { name, .. } => (name, "attention"),
        };
        if name.is_empty() {
            format!("{kind}{index}")
        } else {
            name.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    #[serde(default)]
    pub name: String,
    pub layers: Vec<Layer>,
}

impl Workload {
    /// Parses workload JSON; schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::Workload {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One decode step of a transformer decoder layer: fused QKV
    /// projection, attention over `seq_len` cached tokens, output
    /// projection and a gated feed-forward block.
    pub fn decoder_step(hidden: u64, ffn: u64, heads: u64, seq_len: u64) -> Self {
        let gemm = |name: &str, k, n| Layer::Gemm {
            name: name.into(),
            m: 1,
            k,
            n,
        };
        Self {
            name: format!("decoder-step-{seq_len}"),
            layers: vec![
                gemm("qkv_proj", hidden, 3 * hidden),
                Layer::Attention {
                    name: "attention".into(),
                    seq_len,
                    heads,
                    head_dim: hidden / heads.max(1),
                },
                gemm("o_proj", hidden, hidden),
                gemm("gate_up_proj", hidden, 2 * ffn),
                gemm("down_proj", ffn, hidden),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub workload: String,
    pub config: String,
    pub layers: Vec<SimReport>,
    pub total: SimReport,
}

impl WorkloadReport {
    /// Fraction of cycles spent in GEMM (linear) layers.
    pub fn linear_share(&self) -> f64 {
        let linear: u64 = self
            .layers
            .iter()
            .filter(|r| r.kind == ReportKind::Gemm)
            .map(|r| r.total_cycles)
            .sum();
        if self.total.total_cycles == 0 {
            0.0
        } else {
            linear as f64 / self.total.total_cycles as f64
        }
    }
}

pub fn run_workload(w: &Workload, cfg: &ArrayConfig, cost: &CostModel) -> Result<WorkloadReport> {
    let layers = w
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let label = layer.label(i);
            match *layer {
                Layer::Gemm { m, k, n, .. } => simulate_gemm(&label, GemmShape { m, k, n }, cfg, cost),
                Layer::Attention {
                    seq_len,
                    heads,
                    head_dim,
                    ..
                } => simulate_attention(
                    &label,
                    AttentionShape {
                        seq_len,
                        heads,
                        head_dim,
                    },
                    cfg,
                    cost,
                ),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WorkloadReport {
        workload: w.name.clone(),
        config: cfg.name.clone(),
        total: SimReport::sum("total", &layers),
        layers,
    })
}

/// Speedup and energy of one configuration relative to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRatio {
    pub config: String,
    pub total_cycles: u64,
    pub total_energy: f64,
    /// Baseline cycles / these cycles.
    pub speedup: f64,
    /// These energies / baseline energies.
    pub energy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub workload: String,
    pub baseline: String,
    pub ratios: Vec<ConfigRatio>,
    pub runs: Vec<WorkloadReport>,
}

pub fn compare_configs(w: &Workload, configs: &[ArrayConfig], cost: &CostModel) -> Result<Comparison> {
    let Some(base_cfg) = configs.first() else {
        return Err(SimError::Config("at least one configuration is required".into()));
    };
    let runs = configs
        .iter()
        .map(|c| run_workload(w, c, cost))
        .collect::<Result<Vec<_>>>()?;
    let base = &runs[0].total;
    let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
    let ratios = runs
        .iter()
        .map(|r| ConfigRatio {
            config: r.config.clone(),
            total_cycles: r.total.total_cycles,
            total_energy: r.total.total_energy,
            speedup: ratio(base.total_cycles as f64, r.total.total_cycles as f64),
            energy_ratio: ratio(r.total.total_energy, base.total_energy),
        })
        .collect();
    Ok(Comparison {
        workload: w.name.clone(),
        baseline: base_cfg.name.clone(),
        ratios,
        runs,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config: &'a str,
    layer: &'a str,
    kind: ReportKind,
    total_cycles: u64,
    pipeline_fill: u64,
    stream: u64,
    drain: u64,
    nonoverlapped_quant: u64,
    memory_stall: u64,
    quant_residual_cycles: u64,
    dram_floor_cycles: u64,
    weight_bytes: u64,
    activation_bytes: u64,
    kv_bytes: u64,
    metadata_bytes: u64,
    energy_core: f64,
    energy_buffer: f64,
    energy_dram: f64,
    energy_static: f64,
    total_energy: f64,
    speedup: f64,
    energy_ratio: f64,
}

/// One CSV row per configuration and layer, plus a total row per
/// configuration carrying the ratios.
pub fn comparison_to_csv(c: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (run, ratio) in c.runs.iter().zip(&c.ratios) {
        for r in run.layers.iter().chain(std::iter::once(&run.total)) {
            let is_total = r.kind == ReportKind::Total;
            w.serialize(CsvRow {
                config: &run.config,
                layer: &r.name,
                kind: r.kind,
                total_cycles: r.total_cycles,
                pipeline_fill: r.cycles.pipeline_fill,
                stream: r.cycles.stream,
                drain: r.cycles.drain,
                nonoverlapped_quant: r.cycles.nonoverlapped_quant,
                memory_stall: r.cycles.memory_stall,
                quant_residual_cycles: r.quant_residual_cycles,
                dram_floor_cycles: r.dram_floor_cycles,
                weight_bytes: r.bytes.weights,
                activation_bytes: r.bytes.activations,
                kv_bytes: r.bytes.kv,
                metadata_bytes: r.bytes.metadata,
                energy_core: r.energy.core,
                energy_buffer: r.energy.buffer,
                energy_dram: r.energy.dram,
                energy_static: r.energy.static_energy,
                total_energy: r.total_energy,
                speedup: if is_total { ratio.speedup } else { f64::NAN },
                energy_ratio: if is_total { ratio.energy_ratio } else { f64::NAN },
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
