//! Toy multi-head attention over a quantized KV cache.
//!
//! A prefill phase runs the whole prompt through the batched quantized GEMM
//! (`Q K^T` with MANT K, then `P V` with MANT V), after which each decode
//! step appends one token to every head's cache and attends over all cached
//! tokens. Every output row is compared with a full-precision reference.

use serde::{Deserialize, Serialize};

use crate::codec::{quantize_activation_group, GroupFormat, GroupMeta, QuantizedTensor, Tensor};
use crate::error::{MantError, Result};
use crate::gemm::{combine, fused_group_dot, gemm, gemm_int8, int8_group_dot, GroupDot};
use crate::synth::{KvSource, Stream, StreamParams};

use super::kv_cache::{HeadCache, KvConfig, KvGroup, KvPrecision};
use super::selection::DEFAULT_COEFFICIENTS;
use super::variance::{build_variance_table, VarianceTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub group_size: usize,
    pub prefill_len: usize,
    pub decode_steps: usize,
    pub precision: KvPrecision,
    pub seed: u64,
    /// Groups per table drawn for calibration.
    pub calibration_groups: usize,
    pub min_samples: usize,
    pub candidates: Vec<u8>,
    pub stream: StreamParams,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            head_dim: 64,
            group_size: 64,
            prefill_len: 192,
            decode_steps: 64,
            precision: KvPrecision::Mant4,
            seed: 0,
            calibration_groups: 2048,
            min_samples: 32,
            candidates: DEFAULT_COEFFICIENTS.to_vec(),
            stream: StreamParams::default(),
        }
    }
}

/// Variance tables for K (head-dimension groups) and V (sequence groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTables {
    pub k: VarianceTable,
    pub v: VarianceTable,
}

const CALIBRATION_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Calibrates K and V tables on a synthetic stream drawn with a seed
/// distinct from the evaluation seed.
pub fn calibrate_tables(config: &AttentionConfig) -> Result<AttentionTables> {
    let d = config.head_dim;
    let g = config.group_size;
    if config.heads == 0 || d == 0 || g == 0 {
        return Err(MantError::Geometry("heads, head_dim and group_size must be positive".into()));
    }
    let mut src = KvSource::with_params(config.heads, d, config.seed ^ CALIBRATION_SEED_SALT, config.stream);
    let want = config.calibration_groups.max(1);
    let mut k_groups = Vec::with_capacity(want);
    let mut head = 0;
    while k_groups.len() < want {
        let row = src.next_k(head);
        k_groups.extend(row.chunks(g).map(<[f32]>::to_vec));
        head = (head + 1) % config.heads;
    }
    k_groups.truncate(want);
    let mut v_groups = Vec::with_capacity(want);
    while v_groups.len() < want {
        let block = src.rows(head, g, Stream::V);
        v_groups.extend((0..d).map(|c| (0..g).map(|t| block[t * d + c]).collect::<Vec<f32>>()));
        head = (head + 1) % config.heads;
    }
    v_groups.truncate(want);
    Ok(AttentionTables {
        k: build_variance_table(&k_groups, &config.candidates, config.min_samples)?,
        v: build_variance_table(&v_groups, &config.candidates, config.min_samples)?,
    })
}

/// Agreement of one phase or decode step with the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub tokens: usize,
    pub window_fill: usize,
    pub flushed: bool,
    pub min_cosine: f64,
    pub mean_cosine: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub config: AttentionConfig,
    pub prefill: StepReport,
    pub steps: Vec<StepReport>,
    pub min_cosine: f64,
    pub flushes: usize,
    pub clamped: usize,
    /// Quantized decode outputs, one `heads * head_dim` row per step.
    pub decode_outputs: Vec<Vec<f32>>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Full-precision attention of `q` over the first `tokens` rows of K and V.
pub fn reference_attention(q: &[f32], k: &[f32], v: &[f32], tokens: usize) -> Vec<f64> {
    let d = q.len();
    let inv = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = (0..tokens)
        .map(|t| {
            q.iter()
                .zip(&k[t * d..(t + 1) * d])
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum::<f64>()
                * inv
        })
        .collect();
    let p = softmax(&scores);
    let mut out = vec![0.0; d];
    for (t, &pt) in p.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(&v[t * d..(t + 1) * d]) {
            *o += pt * f64::from(x);
        }
    }
    out
}

struct Agreement {
    min: f64,
    sum: f64,
    n: usize,
    max_abs: f64,
}

impl Agreement {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            sum: 0.0,
            n: 0,
            max_abs: 0.0,
        }
    }

    fn add(&mut self, got: &[f64], want: &[f64]) {
        let c = cosine(got, want);
        self.min = self.min.min(c);
        self.sum += c;
        self.n += 1;
        for (a, b) in got.iter().zip(want) {
            self.max_abs = self.max_abs.max((a - b).abs());
        }
    }

    fn report(&self, step: usize, tokens: usize, window_fill: usize, flushed: bool) -> StepReport {
        StepReport {
            step,
            tokens,
            window_fill,
            flushed,
            min_cosine: self.min,
            mean_cosine: self.sum / self.n.max(1) as f64,
            max_abs_error: self.max_abs,
        }
    }
}

/// Causal prefill through the batched quantized GEMM. Returns `S x d`.
fn prefill_attention(cache: &HeadCache, q: &[f32]) -> Result<Vec<Vec<f64>>> {
    let KvConfig {
        head_dim: d,
        group_size: g,
        precision,
        ..
    } = *cache.config();
    let s = cache.tokens();
    let qq = QuantizedTensor::quantize_int8(&Tensor::new(vec![s, d], q.to_vec())?, 1, g)?;
    let k_groups: Vec<&KvGroup> = (0..s).flat_map(|t| cache.k_groups(t)).collect();
    let scores = match precision {
        KvPrecision::Mant4 => {
            let groups = k_groups
                .into_iter()
                .map(|grp| match grp {
                    KvGroup::Mant(e) => Ok((e.codes.clone(), e.meta)),
                    KvGroup::Int8 { .. } => Err(MantError::KindMismatch {
                        expected: "MANT4",
                        actual: "INT8",
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            gemm(&qq, &QuantizedTensor::from_four_bit_groups(vec![d, s], g, 0, groups)?)?
        }
        KvPrecision::Int8 => {
            let groups = k_groups
                .into_iter()
                .map(|grp| match grp {
                    KvGroup::Int8 { codes, meta } => Ok((codes.clone(), *meta)),
                    KvGroup::Mant(_) => Err(MantError::KindMismatch {
                        expected: "INT8",
                        actual: "MANT4",
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            gemm_int8(&qq, &QuantizedTensor::from_int8_groups(vec![d, s], g, 0, groups)?)?
        }
    };
    let inv = 1.0 / (d as f64).sqrt();
    let mut p = vec![0.0f32; s * s];
    for i in 0..s {
        let row: Vec<f64> = (0..=i).map(|j| scores.get(i, j) * inv).collect();
        for (j, x) in softmax(&row).into_iter().enumerate() {
            p[i * s + j] = x as f32;
        }
    }
    let pq = QuantizedTensor::quantize_int8(&Tensor::new(vec![s, s], p)?, 1, g)?;
    let blocks = s / g;
    let out = match precision {
        KvPrecision::Mant4 => {
            let mut groups = Vec::with_capacity(d * blocks);
            for c in 0..d {
                for b in 0..blocks {
                    let e = &cache.v_blocks()[b][c];
                    groups.push((e.codes.clone(), e.meta));
                }
            }
            gemm(&pq, &QuantizedTensor::from_four_bit_groups(vec![s, d], g, 0, groups)?)?
        }
        KvPrecision::Int8 => {
            let mut groups = Vec::with_capacity(d * blocks);
            for (c, &scale) in cache.channel_scales().iter().enumerate() {
                for b in 0..blocks {
                    let codes = (b * g..(b + 1) * g).map(|t| cache.v_int8_row(t)[c]).collect();
                    let meta = GroupMeta {
                        scale,
                        format: GroupFormat::Int8,
                        len: g,
                    };
                    groups.push((codes, meta));
                }
            }
            gemm_int8(&pq, &QuantizedTensor::from_int8_groups(vec![s, d], g, 0, groups)?)?
        }
    };
    Ok((0..s).map(|i| out.row(i).to_vec()).collect())
}

/// One decode query against the whole cache using per-group integer dots.
pub fn decode_attention(cache: &HeadCache, q: &[f32]) -> Result<Vec<f64>> {
    let KvConfig {
        head_dim: d,
        group_size: g,
        precision,
        ..
    } = *cache.config();
    if q.len() != d {
        return Err(MantError::LengthMismatch {
            expected: d,
            actual: q.len(),
        });
    }
    let q_groups = q
        .chunks(g)
        .map(quantize_activation_group)
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / (d as f64).sqrt();
    let tokens = cache.tokens();
    let mut scores = Vec::with_capacity(tokens);
    for t in 0..tokens {
        let mut acc = 0.0;
        for ((qc, qm), kg) in q_groups.iter().zip(cache.k_groups(t)) {
            acc += match kg {
                KvGroup::Mant(e) => combine(fused_group_dot(qc, &e.codes)?, e.meta.format, qm.scale, e.meta.scale),
                KvGroup::Int8 { codes, meta } => {
                    f64::from(int8_group_dot(qc, codes)?) * f64::from(qm.scale) * f64::from(meta.scale)
                }
            };
        }
        scores.push(acc * inv);
    }
    let p: Vec<f32> = softmax(&scores).into_iter().map(|x| x as f32).collect();
    let mut out = vec![0.0f64; d];
    let scales = cache.channel_scales();
    for (b, chunk) in p.chunks(g).enumerate() {
        let (pc, pm) = quantize_activation_group(chunk)?;
        let base = b * g;
        match precision {
            KvPrecision::Mant4 if b < cache.v_blocks().len() => {
                for (o, e) in out.iter_mut().zip(&cache.v_blocks()[b]) {
                    let dot: GroupDot = fused_group_dot(&pc, &e.codes)?;
                    *o += combine(dot, e.meta.format, pm.scale, e.meta.scale);
                }
            }
            KvPrecision::Mant4 => {
                let w = cache.window();
                for (c, o) in out.iter_mut().enumerate() {
                    let col = w.staged_column(c);
                    *o += f64::from(int8_group_dot(&pc, &col)?) * f64::from(pm.scale) * f64::from(scales[c]);
                }
            }
            KvPrecision::Int8 => {
                for (c, o) in out.iter_mut().enumerate() {
                    let col: Vec<i8> = (base..base + chunk.len()).map(|t| cache.v_int8_row(t)[c]).collect();
                    *o += f64::from(int8_group_dot(&pc, &col)?) * f64::from(pm.scale) * f64::from(scales[c]);
                }
            }
        }
    }
    Ok(out)
}

/// Runs prefill and `decode_steps` decode steps on a synthetic stream.
pub fn run_toy_attention(config: &AttentionConfig, tables: &AttentionTables) -> Result<AttentionReport> {
    let AttentionConfig {
        heads,
        head_dim: d,
        group_size: g,
        prefill_len: s,
        decode_steps,
        precision,
        seed,
        stream,
        ..
    } = *config;
    if heads == 0 || d == 0 {
        return Err(MantError::Geometry("heads and head_dim must be positive".into()));
    }
    let kv = KvConfig {
        head_dim: d,
        group_size: g,
        max_seq: s + decode_steps,
        precision,
    };
    let mut src = KvSource::with_params(heads, d, seed, stream);
    let mut caches = Vec::with_capacity(heads);
    let mut raw_k = Vec::with_capacity(heads);
    let mut raw_v = Vec::with_capacity(heads);
    let mut got_rows = vec![Vec::with_capacity(heads * d); s];
    let mut want_rows = vec![Vec::with_capacity(heads * d); s];
    for h in 0..heads {
        let k = src.rows(h, s, Stream::K);
        let v = src.rows(h, s, Stream::V);
        let q = src.rows(h, s, Stream::Q);
        let cache = HeadCache::prefill(kv, tables.k.clone(), tables.v.clone(), &k, &v)?;
        let got = prefill_attention(&cache, &q)?;
        for (i, row) in got.into_iter().enumerate() {
            got_rows[i].extend(row);
            want_rows[i].extend(reference_attention(&q[i * d..(i + 1) * d], &k, &v, i + 1));
        }
        caches.push(cache);
        raw_k.push(k);
        raw_v.push(v);
    }
    let mut prefill = Agreement::new();
    for (g, w) in got_rows.iter().zip(&want_rows) {
        prefill.add(g, w);
    }
    let prefill = prefill.report(0, s, 0, false);
    let mut min_cosine = prefill.min_cosine;
    let mut steps = Vec::with_capacity(decode_steps);
    let mut decode_outputs = Vec::with_capacity(decode_steps);
    for step in 0..decode_steps {
        let mut flushed = false;
        let mut got_row = Vec::with_capacity(heads * d);
        let mut want_row = Vec::with_capacity(heads * d);
        for h in 0..heads {
            let k = src.next_k(h);
            let v = src.next_v(h);
            let q = src.next_q(h);
            if let Some(b) = caches[h].append(&k, &v)? {
                log::info!("step {step}: head {h} flushed V block {b}");
                flushed = true;
            }
            raw_k[h].extend_from_slice(&k);
            raw_v[h].extend_from_slice(&v);
            got_row.extend(decode_attention(&caches[h], &q)?);
            want_row.extend(reference_attention(&q, &raw_k[h], &raw_v[h], caches[h].tokens()));
        }
        let mut agree = Agreement::new();
        agree.add(&got_row, &want_row);
        let r = agree.report(step + 1, caches[0].tokens(), caches[0].window().fill(), flushed);
        min_cosine = min_cosine.min(r.min_cosine);
        steps.push(r);
        decode_outputs.push(got_row.iter().map(|&x| x as f32).collect());
    }
    Ok(AttentionReport {
        config: config.clone(),
        prefill,
        steps,
        min_cosine,
        flushes: caches.iter().map(HeadCache::flushes).sum(),
        clamped: caches.iter().map(HeadCache::clamped).sum(),
        decode_outputs,
    })
}
