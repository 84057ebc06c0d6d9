//! Per-head quantized KV cache.
//!
//! K is grouped along the head dimension, one token at a time. V is grouped
//! along the sequence: complete blocks of `group_size` tokens are stored as
//! MANT groups per channel and the newest, incomplete block lives in a
//! [`ProcessWindow`]. With [`KvPrecision::Int8`] both K and V stay INT8.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{
    dequantize_4bit, dequantize_int8, quantize_activation_group, quantize_int8_with_scale, quantize_weight_group,
    round_scale, GroupFormat, GroupMeta,
};
use crate::error::{MantError, Result};

use super::variance::{select_by_variance, select_from_stats, RunningStats, VarianceTable};
use super::window::ProcessWindow;
use super::EncodedGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvPrecision {
    #[default]
    Mant4,
    Int8,
}

impl fmt::Display for KvPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mant4 => "mant4",
            Self::Int8 => "int8",
        })
    }
}

impl FromStr for KvPrecision {
    type Err = MantError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mant4" | "mant" => Ok(Self::Mant4),
            "int8" => Ok(Self::Int8),
            other => Err(MantError::Format(format!("unknown KV precision '{other}'"))),
        }
    }
}

/// One stored K group.
#[derive(Debug, Clone, PartialEq)]
pub enum KvGroup {
    Mant(EncodedGroup),
    Int8 { codes: Vec<i8>, meta: GroupMeta },
}

impl KvGroup {
    pub fn meta(&self) -> &GroupMeta {
        match self {
            Self::Mant(g) => &g.meta,
            Self::Int8 { meta, .. } => meta,
        }
    }

    pub fn dequantize(&self) -> Result<Vec<f32>> {
        match self {
            Self::Mant(g) => dequantize_4bit(&g.codes, &g.meta),
            Self::Int8 { codes, meta } => dequantize_int8(codes, meta),
        }
    }
}

/// Quantizes one K row: each head-dimension group gets the coefficient its
/// single-pass variance selects from `table`.
pub fn quantize_k_step(k: &[f32], table: &VarianceTable, group_size: usize) -> Result<Vec<EncodedGroup>> {
    if group_size == 0 {
        return Err(MantError::InvalidGroupSize(group_size));
    }
    k.chunks(group_size)
        .map(|g| {
            let a = select_from_stats(&RunningStats::from_values(g), table);
            quantize_weight_group(g, a).map(EncodedGroup::from)
        })
        .collect()
}

/// Cache shape and policy for one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvConfig {
    pub head_dim: usize,
    pub group_size: usize,
    pub max_seq: usize,
    pub precision: KvPrecision,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    config: KvConfig,
    k_table: VarianceTable,
    v_table: VarianceTable,
    k: Vec<Vec<KvGroup>>,
    v_blocks: Vec<Vec<EncodedGroup>>,
    window: ProcessWindow,
    v_rows: Vec<i8>,
    int8_clamped: usize,
    tokens: usize,
    flushes: usize,
}

impl HeadCache {
    /// Builds the cache from `prefill` rows of K and V (row-major, one row
    /// per token). The prefill length must be a positive multiple of the
    /// group size so the window starts empty.
    pub fn prefill(
        config: KvConfig,
        k_table: VarianceTable,
        v_table: VarianceTable,
        k: &[f32],
        v: &[f32],
    ) -> Result<Self> {
        let KvConfig {
            head_dim: d,
            group_size: g,
            max_seq,
            ..
        } = config;
        if g == 0 || g > usize::from(u16::MAX) {
            return Err(MantError::InvalidGroupSize(g));
        }
        if d == 0 {
            return Err(MantError::Geometry("head_dim must be positive".into()));
        }
        if k.len() != v.len() || !k.len().is_multiple_of(d) {
            return Err(MantError::ShapeMismatch(format!(
                "K has {} values and V has {}, expected equal multiples of {d}",
                k.len(),
                v.len()
            )));
        }
        let s = k.len() / d;
        if s == 0 || !s.is_multiple_of(g) {
            return Err(MantError::GroupMisaligned(format!(
                "prefill length {s} must be a positive multiple of the group size {g}"
            )));
        }
        if s > max_seq {
            return Err(MantError::Geometry(format!("prefill length {s} exceeds max_seq {max_seq}")));
        }
        let channel_scales: Vec<f32> = (0..d)
            .map(|c| {
                let m = (0..s).fold(0.0f64, |m, t| m.max(f64::from(v[t * d + c].abs())));
                round_scale(m / 127.0)
            })
            .collect();
        let mut cache = Self {
            config,
            window: ProcessWindow::new(channel_scales, g)?,
            k_table,
            v_table,
            k: Vec::with_capacity(max_seq),
            v_blocks: Vec::new(),
            v_rows: Vec::new(),
            int8_clamped: 0,
            tokens: 0,
            flushes: 0,
        };
        for row in k.chunks_exact(d) {
            let groups = cache.encode_k(row)?;
            cache.k.push(groups);
        }
        match config.precision {
            KvPrecision::Mant4 => {
                for b in 0..s / g {
                    let block = (0..d)
                        .map(|c| {
                            let col: Vec<f32> = (b * g..(b + 1) * g).map(|t| v[t * d + c]).collect();
                            let a = select_by_variance(&col, &cache.v_table);
                            quantize_weight_group(&col, a).map(EncodedGroup::from)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cache.v_blocks.push(block);
                }
            }
            KvPrecision::Int8 => {
                for row in v.chunks_exact(d) {
                    cache.push_int8_v(row)?;
                }
            }
        }
        cache.tokens = s;
        Ok(cache)
    }

    fn encode_k(&self, row: &[f32]) -> Result<Vec<KvGroup>> {
        let g = self.config.group_size;
        match self.config.precision {
            KvPrecision::Mant4 => Ok(quantize_k_step(row, &self.k_table, g)?
                .into_iter()
                .map(KvGroup::Mant)
                .collect()),
            KvPrecision::Int8 => row
                .chunks(g)
                .map(|c| quantize_activation_group(c).map(|(codes, meta)| KvGroup::Int8 { codes, meta }))
                .collect(),
        }
    }

    fn push_int8_v(&mut self, row: &[f32]) -> Result<()> {
        for (&x, &s) in row.iter().zip(self.window.channel_scales()) {
            let (code, clamped) = quantize_int8_with_scale(&[x], s)?;
            self.int8_clamped += clamped;
            self.v_rows.push(code[0]);
        }
        Ok(())
    }

    /// Appends one decode token. Returns the index of the V block that was
    /// completed and requantized, if any.
    pub fn append(&mut self, k: &[f32], v: &[f32]) -> Result<Option<usize>> {
        let d = self.config.head_dim;
        if k.len() != d || v.len() != d {
            return Err(MantError::LengthMismatch {
                expected: d,
                actual: if k.len() != d { k.len() } else { v.len() },
            });
        }
        if self.tokens >= self.config.max_seq {
            return Err(MantError::Geometry(format!("cache is full at {} tokens", self.tokens)));
        }
        let groups = self.encode_k(k)?;
        let mut flushed = None;
        match self.config.precision {
            KvPrecision::Mant4 => {
                self.window.push(v)?;
                if self.window.is_full() {
                    let block = self.window.flush(&self.v_table)?;
                    self.v_blocks.push(block);
                    self.flushes += 1;
                    flushed = Some(self.v_blocks.len() - 1);
                    log::debug!(
                        "flushed V block {} at token {}",
                        self.v_blocks.len() - 1,
                        self.tokens + 1
                    );
                }
            }
            KvPrecision::Int8 => self.push_int8_v(v)?,
        }
        self.k.push(groups);
        self.tokens += 1;
        Ok(flushed)
    }

    pub fn config(&self) -> &KvConfig {
        &self.config
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn flushes(&self) -> usize {
        self.flushes
    }

    /// INT8 values clamped against the per-channel scales so far.
    pub fn clamped(&self) -> usize {
        self.int8_clamped + self.window.clamped()
    }

    pub fn k_groups(&self, token: usize) -> &[KvGroup] {
        &self.k[token]
    }

    /// Complete MANT V blocks; each holds one group per channel.
    pub fn v_blocks(&self) -> &[Vec<EncodedGroup>] {
        &self.v_blocks
    }

    pub fn window(&self) -> &ProcessWindow {
        &self.window
    }

    pub fn channel_scales(&self) -> &[f32] {
        self.window.channel_scales()
    }

    /// INT8 V row of `token` when the cache runs at INT8 precision.
    pub fn v_int8_row(&self, token: usize) -> &[i8] {
        let d = self.config.head_dim;
        &self.v_rows[token * d..(token + 1) * d]
    }

    pub fn dequantize_k(&self) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.tokens * self.config.head_dim);
        for groups in &self.k {
            for g in groups {
                out.extend(g.dequantize()?);
            }
        }
        Ok(out)
    }

    /// Dequantized V, one row per token.
    pub fn dequantize_v(&self) -> Result<Vec<f32>> {
        let d = self.config.head_dim;
        let g = self.config.group_size;
        let mut out = vec![0.0f32; self.tokens * d];
        match self.config.precision {
            KvPrecision::Mant4 => {
                for (b, block) in self.v_blocks.iter().enumerate() {
                    for (c, grp) in block.iter().enumerate() {
                        for (i, x) in dequantize_4bit(&grp.codes, &grp.meta)?.into_iter().enumerate() {
                            out[(b * g + i) * d + c] = x;
                        }
                    }
                }
                let base = self.v_blocks.len() * g;
                for r in 0..self.window.fill() {
                    for (c, (&q, &s)) in self.window.staged_row(r).iter().zip(self.channel_scales()).enumerate() {
                        out[(base + r) * d + c] = f32::from(q) * s;
                    }
                }
            }
            KvPrecision::Int8 => {
                for (i, (&q, &s)) in self
                    .v_rows
                    .iter()
                    .zip(self.channel_scales().iter().cycle())
                    .enumerate()
                {
                    out[i] = f32::from(q) * s;
                }
            }
        }
        Ok(out)
    }

    /// Coefficients chosen for the MANT V blocks, block-major.
    pub fn v_coefficients(&self) -> Vec<u8> {
        self.v_blocks
            .iter()
            .flatten()
            .filter_map(|g| match g.meta.format {
                GroupFormat::Mant(a) => Some(a),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(precision: KvPrecision) -> KvConfig {
        KvConfig {
            head_dim: 4,
            group_size: 4,
            max_seq: 16,
            precision,
        }
    }

    fn rows(n: usize, seed: f32) -> Vec<f32> {
        (0..n * 4).map(|i| ((i as f32 * 0.37 + seed).sin()) * 2.0).collect()
    }

    #[test]
    fn prefill_must_align() {
        let t = VarianceTable::single(17);
        let err = HeadCache::prefill(cfg(KvPrecision::Mant4), t.clone(), t, &rows(3, 0.0), &rows(3, 1.0));
        assert!(matches!(err, Err(MantError::GroupMisaligned(_))));
    }

    #[test]
    fn flush_on_every_group_boundary() {
        let t = VarianceTable::single(17);
        let mut c = HeadCache::prefill(cfg(KvPrecision::Mant4), t.clone(), t, &rows(4, 0.0), &rows(4, 1.0)).unwrap();
        let mut flushed = vec![];
        for i in 0..8 {
            let k = rows(1, i as f32);
            if let Some(b) = c.append(&k, &k).unwrap() {
                flushed.push((i, b));
            }
        }
        assert_eq!(flushed, vec![(3, 1), (7, 2)]);
        assert_eq!(c.tokens(), 12);
        assert_eq!(c.window().fill(), 0);
        assert_eq!(c.dequantize_v().unwrap().len(), 48);
    }

    #[test]
    fn capacity_is_enforced() {
        let t = VarianceTable::single(0);
        let mut c = HeadCache::prefill(cfg(KvPrecision::Int8), t.clone(), t, &rows(16, 0.0), &rows(16, 1.0)).unwrap();
        assert!(matches!(c.append(&[0.0; 4], &[0.0; 4]), Err(MantError::Geometry(_))));
    }

    #[test]
    fn precision_parsing() {
        assert_eq!("INT8".parse::<KvPrecision>().unwrap(), KvPrecision::Int8);
        assert!("fp16".parse::<KvPrecision>().is_err());
    }
}
