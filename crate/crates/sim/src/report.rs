//! Simulation reports. Every breakdown sums to its total and multi-layer
//! totals are plain sums of the per-layer reports.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub pipeline_fill: u64,
    pub stream: u64,
    pub drain: u64,
    /// Quantization cycles not hidden behind compute.
    pub nonoverlapped_quant: u64,
    /// Cycles spent waiting on DRAM beyond the compute time.
    pub memory_stall: u64,
}

impl CycleBreakdown {
    pub fn total(&self) -> u64 {
        self.pipeline_fill + self.stream + self.drain + self.nonoverlapped_quant + self.memory_stall
    }

    pub fn compute(&self) -> u64 {
        self.total() - self.memory_stall
    }

    fn add(&mut self, o: &Self) {
        self.pipeline_fill += o.pipeline_fill;
        self.stream += o.stream;
        self.drain += o.drain;
        self.nonoverlapped_quant += o.nonoverlapped_quant;
        self.memory_stall += o.memory_stall;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub core: f64,
    pub buffer: f64,
    pub dram: f64,
    #[serde(rename = "static")]
    pub static_energy: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.core + self.buffer + self.dram + self.static_energy
    }

    fn add(&mut self, o: &Self) {
        self.core += o.core;
        self.buffer += o.buffer;
        self.dram += o.dram;
        self.static_energy += o.static_energy;
    }
}

/// DRAM traffic by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteBreakdown {
    pub weights: u64,
    pub activations: u64,
    pub kv: u64,
    pub metadata: u64,
}

impl ByteBreakdown {
    pub fn total(&self) -> u64 {
        self.weights + self.activations + self.kv + self.metadata
    }

    fn add(&mut self, o: &Self) {
        self.weights += o.weights;
        self.activations += o.activations;
        self.kv += o.kv;
        self.metadata += o.metadata;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Gemm,
    Attention,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub kind: ReportKind,
    pub total_cycles: u64,
    pub cycles: CycleBreakdown,
    /// Portion of `nonoverlapped_quant` caused by blocks whose quantization
    /// outlasted the next block's compute; the rest is the final block's
    /// exposed tail.
    pub quant_residual_cycles: u64,
    /// `ceil(total bytes / dram_bandwidth)`, summed per layer.
    pub dram_floor_cycles: u64,
    pub macs: u64,
    pub sram_bytes: u64,
    pub bytes: ByteBreakdown,
    pub total_bytes: u64,
    pub energy: EnergyBreakdown,
    pub total_energy: f64,
    pub latency_seconds: f64,
}

impl SimReport {
    /// Sums per-layer reports. Energy totals are the sum of the layers'
    /// totals so additivity holds exactly.
    pub fn sum<'a>(name: &str, reports: impl IntoIterator<Item = &'a SimReport>) -> SimReport {
        let mut t = SimReport {
            name: name.to_string(),
            kind: ReportKind::Total,
            total_cycles: 0,
            cycles: CycleBreakdown::default(),
            quant_residual_cycles: 0,
            dram_floor_cycles: 0,
            macs: 0,
            sram_bytes: 0,
            bytes: ByteBreakdown::default(),
            total_bytes: 0,
            energy: EnergyBreakdown::default(),
            total_energy: 0.0,
            latency_seconds: 0.0,
        };
        for r in reports {
            t.total_cycles += r.total_cycles;
            t.cycles.add(&r.cycles);
            t.quant_residual_cycles += r.quant_residual_cycles;
            t.dram_floor_cycles += r.dram_floor_cycles;
            t.macs += r.macs;
            t.sram_bytes += r.sram_bytes;
            t.bytes.add(&r.bytes);
            t.total_bytes += r.total_bytes;
            t.energy.add(&r.energy);
            t.total_energy += r.total_energy;
            t.latency_seconds += r.latency_seconds;
        }
        t
    }

    /// Share of total cycles spent on non-overlapped quantization.
    pub fn quant_overhead(&self) -> f64 {
        if self.total_cycles == 0 {
            0.0
        } else {
            self.cycles.nonoverlapped_quant as f64 / self.total_cycles as f64
        }
    }
}
