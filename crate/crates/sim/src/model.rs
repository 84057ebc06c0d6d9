//! Cycle and traffic model.
//!
//! GEMM `Y[M x N] = X[M x K] W[K x N]` runs weight-stationary on a logical
//! `R x C` array (`R = logical_rows(bits)`, `C = peg_cols`):
//!
//! * the weights are cut into `ceil(K/R) * ceil(N/C)` tiles; each tile costs
//!   `R + C - 1` fill cycles and `M` streaming cycles;
//! * the accumulators drain once, `drain_latency` cycles;
//! * outputs are re-quantized per group of `G` output columns, i.e. per
//!   block of `rounds = ceil(G / rqu_count)` output tiles. A block's
//!   quantization takes `rqu_latency + (tiles - 1)` cycles of max search,
//!   one scale division and one division per output row and tile:
//!   `Q = rqu_latency + tiles - 1 + div * (1 + M * tiles)`;
//! * block `b`'s quantization overlaps the compute of block `b + 1`
//!   (`tiles * ceil(K/R) * (R + C - 1 + M)` cycles); any excess is a
//!   residual, and the last block's quantization is an exposed tail. With
//!   at least `div` K-iterations per output tile the residual is zero;
//! * DRAM traffic sets a floor of `ceil(bytes / dram_bandwidth)` cycles and
//!   any shortfall of compute against it is charged as memory stall.
//!
//! A decode attention step is two GEMVs per head (`q K^T` over the cached
//! length and `p V`) with K and V as the stationary operands at `kv_bits`.

use serde::{Deserialize, Serialize};

use crate::config::{ArrayConfig, CostModel};
use crate::error::{Result, SimError};
use crate::report::{ByteBreakdown, CycleBreakdown, EnergyBreakdown, ReportKind, SimReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub seq_len: u64,
    pub heads: u64,
    pub head_dim: u64,
}

/// Compute-side result of one GEMM before the DRAM floor is applied.
#[derive(Debug, Clone, Copy, Default)]
struct Core {
    cycles: CycleBreakdown,
    residual: u64,
    macs: u64,
    sram_bytes: u64,
    core_energy: f64,
}

fn core_gemm(s: GemmShape, bits: u32, cfg: &ArrayConfig, cost: &CostModel) -> Core {
    let r = cfg.logical_rows(bits);
    let c = cfg.peg_cols;
    let k_tiles = s.k.div_ceil(r);
    let n_tiles = s.n.div_ceil(c);
    let fill_per_tile = r + c - 1;
    let rounds = cfg.rqu_rounds();
    let blocks = n_tiles.div_ceil(rounds);
    let tiles_in = |b: u64| rounds.min(n_tiles - b * rounds);
    let quant = |b: u64| {
        let t = tiles_in(b);
        cfg.rqu_latency + t - 1 + cfg.divider_latency * (1 + s.m * t)
    };
    let window = |b: u64| tiles_in(b) * k_tiles * (fill_per_tile + s.m);
    let residual: u64 = (0..blocks.saturating_sub(1))
        .map(|b| quant(b).saturating_sub(window(b + 1)))
        .sum();
    let tail = if blocks > 0 { quant(blocks - 1) } else { 0 };
    let tiles = k_tiles * n_tiles;
    let macs = s.m * s.k * s.n;
    let per_mac = cost.mac(bits)
        + if bits < 8 {
            cost.shift_accumulate + cost.psum2_lane
        } else {
            0.0
        };
    // Weights are read from the buffer once, activations once per tile,
    // and two 32-bit partial sums per output element and K-tile.
    let sram_bytes = (s.k * s.n * u64::from(bits)).div_ceil(8) + tiles * s.m * r + k_tiles * s.m * s.n * 8;
    Core {
        cycles: CycleBreakdown {
            pipeline_fill: tiles * fill_per_tile,
            stream: tiles * s.m,
            drain: cfg.drain_latency,
            nonoverlapped_quant: residual + tail,
            memory_stall: 0,
        },
        residual,
        macs,
        sram_bytes,
        core_energy: macs as f64 * per_mac + (s.m * s.n) as f64 * cost.rqu_per_element,
    }
}

/// INT8 tensor with group metadata (f16 scale per group).
fn int8_bytes(rows: u64, cols: u64, g: u64) -> (u64, u64) {
    (rows * cols, 2 * rows * cols.div_ceil(g))
}

/// Stationary operand of `k x n` at `bits`, grouped along `k`.
fn stationary_bytes(k: u64, n: u64, bits: u32, g: u64) -> (u64, u64) {
    (
        (k * n * u64::from(bits)).div_ceil(8),
        n * k.div_ceil(g) * ArrayConfig::metadata_bytes(bits),
    )
}

fn finish(
    name: &str,
    kind: ReportKind,
    core: Core,
    bytes: ByteBreakdown,
    extra_core_energy: f64,
    cfg: &ArrayConfig,
    cost: &CostModel,
) -> SimReport {
    let total_bytes = bytes.total();
    let floor = (total_bytes as f64 / cfg.dram_bandwidth).ceil() as u64;
    let mut cycles = core.cycles;
    cycles.memory_stall = floor.saturating_sub(cycles.compute());
    let total_cycles = cycles.total();
    let energy = EnergyBreakdown {
        core: core.core_energy + extra_core_energy,
        buffer: core.sram_bytes as f64 * cost.sram_per_byte,
        dram: total_bytes as f64 * cost.dram_per_byte,
        static_energy: total_cycles as f64 * cost.static_per_cycle,
    };
    SimReport {
        name: name.to_string(),
        kind,
        total_cycles,
        cycles,
        quant_residual_cycles: core.residual,
        dram_floor_cycles: floor,
        macs: core.macs,
        sram_bytes: core.sram_bytes,
        bytes,
        total_bytes,
        total_energy: energy.total(),
        energy,
        latency_seconds: total_cycles as f64 / cfg.frequency_hz,
    }
}

fn check_dims(what: &str, dims: &[u64]) -> Result<()> {
    if dims.contains(&0) {
        return Err(SimError::Geometry(format!("{what} dimensions must be >= 1, got {dims:?}")));
    }
    Ok(())
}

/// Simulates one GEMM with weights at `cfg.weight_bits`.
pub fn simulate_gemm(name: &str, s: GemmShape, cfg: &ArrayConfig, cost: &CostModel) -> Result<SimReport> {
    cfg.validate()?;
    cost.validate()?;
    check_dims("gemm", &[s.m, s.k, s.n])?;
    let bits = cfg.weight_bits;
    let g = cfg.group_size;
    let core = core_gemm(s, bits, cfg, cost);
    let (w, w_meta) = stationary_bytes(s.k, s.n, bits, g);
    let (x, x_meta) = int8_bytes(s.m, s.k, g);
    let (y, y_meta) = int8_bytes(s.m, s.n, g);
    // Activations are re-read once per weight-buffer load unless they fit
    // in the activation buffer.
    let strip = (cfg.weight_buffer_bytes * 8 / (s.k * u64::from(bits)).max(1)) / cfg.peg_cols * cfg.peg_cols;
    let passes = s.n.div_ceil(strip.max(cfg.peg_cols));
    let reads = if x + x_meta <= cfg.activation_buffer_bytes { 1 } else { passes };
    let bytes = ByteBreakdown {
        weights: w,
        activations: x * reads + y,
        kv: 0,
        metadata: w_meta + x_meta * reads + y_meta,
    };
    Ok(finish(name, ReportKind::Gemm, core, bytes, 0.0, cfg, cost))
}

/// Simulates one decode step of multi-head attention over `seq_len`
/// cached tokens with KV entries at `cfg.kv_bits`.
pub fn simulate_attention(name: &str, s: AttentionShape, cfg: &ArrayConfig, cost: &CostModel) -> Result<SimReport> {
    cfg.validate()?;
    cost.validate()?;
    check_dims("attention", &[s.seq_len, s.heads, s.head_dim])?;
    let bits = cfg.kv_bits;
    let g = cfg.group_size;
    let (l, d) = (s.seq_len, s.head_dim);
    let qk = core_gemm(GemmShape { m: 1, k: d, n: l }, bits, cfg, cost);
    let pv = core_gemm(GemmShape { m: 1, k: l, n: d }, bits, cfg, cost);
    let mut core = Core::default();
    for part in [qk, pv] {
        let c = &part.cycles;
        core.cycles.pipeline_fill += c.pipeline_fill * s.heads;
        core.cycles.stream += c.stream * s.heads;
        core.cycles.drain += c.drain * s.heads;
        core.cycles.nonoverlapped_quant += c.nonoverlapped_quant * s.heads;
        core.residual += part.residual * s.heads;
        core.macs += part.macs * s.heads;
        core.sram_bytes += part.sram_bytes * s.heads;
        core.core_energy += part.core_energy * s.heads as f64;
    }
    // K is grouped along head_dim per token, V along the sequence per
    // channel; both carry the same payload.
    let payload = (l * d * u64::from(bits)).div_ceil(8);
    let meta = ArrayConfig::metadata_bytes(bits);
    let k_meta = l * d.div_ceil(g) * meta;
    let v_meta = d * l.div_ceil(g) * meta;
    let (q, q_meta) = int8_bytes(1, d, g);
    let (o, o_meta) = int8_bytes(1, d, g);
    let bytes = ByteBreakdown {
        weights: 0,
        activations: (q + o) * s.heads,
        kv: 2 * payload * s.heads,
        metadata: (k_meta + v_meta + q_meta + o_meta) * s.heads,
    };
    // Temporal-mode RQUs fold the new V row into running statistics; this
    // is pipelined and costs energy only.
    let temporal = (s.heads * d) as f64 * cost.rqu_accumulate;
    Ok(finish(name, ReportKind::Attention, core, bytes, temporal, cfg, cost))
}
