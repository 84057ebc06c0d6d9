//! Staging window for temporally grouped V values.
//!
//! Incoming V rows are held as INT8 against fixed per-channel scales while
//! running statistics of the true values are accumulated per channel. Once
//! `group_size` rows are staged, every channel is requantized to a MANT group
//! whose coefficient comes from the accumulated variance.

use crate::codec::{quantize_int8_with_scale, quantize_weight_group};
use crate::error::{MantError, Result};

use super::variance::{select_from_stats, RunningStats, VarianceTable};
use super::EncodedGroup;

#[derive(Debug, Clone)]
pub struct ProcessWindow {
    group_size: usize,
    channel_scales: Vec<f32>,
    staged: Vec<i8>,
    stats: Vec<RunningStats>,
    fill: usize,
    clamped: usize,
}

impl ProcessWindow {
    pub fn new(channel_scales: Vec<f32>, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(MantError::InvalidGroupSize(group_size));
        }
        let d = channel_scales.len();
        Ok(Self {
            group_size,
            staged: Vec::with_capacity(d * group_size),
            stats: vec![RunningStats::default(); d],
            channel_scales,
            fill: 0,
            clamped: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.channel_scales.len()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.group_size
    }

    pub fn channel_scales(&self) -> &[f32] {
        &self.channel_scales
    }

    /// Values clamped to +/-127 since construction.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn stats(&self, channel: usize) -> &RunningStats {
        &self.stats[channel]
    }

    /// Staged INT8 row `r` (one code per channel).
    pub fn staged_row(&self, r: usize) -> &[i8] {
        let d = self.channels();
        &self.staged[r * d..(r + 1) * d]
    }

    /// Staged INT8 codes of one channel, in token order.
    pub fn staged_column(&self, channel: usize) -> Vec<i8> {
        (0..self.fill).map(|r| self.staged_row(r)[channel]).collect()
    }

    pub fn push(&mut self, v: &[f32]) -> Result<()> {
        if v.len() != self.channels() {
            return Err(MantError::LengthMismatch {
                expected: self.channels(),
                actual: v.len(),
            });
        }
        if self.is_full() {
            return Err(MantError::WindowFull);
        }
        for (c, (&x, &s)) in v.iter().zip(&self.channel_scales).enumerate() {
            let (code, clamped) = quantize_int8_with_scale(&[x], s)?;
            self.clamped += clamped;
            self.staged.push(code[0]);
            self.stats[c].push(f64::from(x));
        }
        self.fill += 1;
        Ok(())
    }

    /// Requantizes every channel of a full window to MANT and resets it.
    pub fn flush(&mut self, table: &VarianceTable) -> Result<Vec<EncodedGroup>> {
        if !self.is_full() {
            return Err(MantError::WindowNotFull {
                fill: self.fill,
                group_size: self.group_size,
            });
        }
        let groups = (0..self.channels())
            .map(|c| {
                let a = select_from_stats(&self.stats[c], table);
                let s = self.channel_scales[c];
                let values: Vec<f32> = self.staged_column(c).iter().map(|&q| f32::from(q) * s).collect();
                quantize_weight_group(&values, a).map(EncodedGroup::from)
            })
            .collect::<Result<Vec<_>>>()?;
        self.staged.clear();
        self.stats.iter_mut().for_each(RunningStats::reset);
        self.fill = 0;
        Ok(groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_stage_and_flush() {
        let mut w = ProcessWindow::new(vec![0.01, 0.02], 4).unwrap();
        for i in 0..4 {
            w.push(&[i as f32 * 0.1, -(i as f32) * 0.2]).unwrap();
        }
        assert!(w.is_full());
        assert_eq!(w.staged_column(0), vec![0, 10, 20, 30]);
        assert!(matches!(w.push(&[0.0, 0.0]), Err(MantError::WindowFull)));
        let groups = w.flush(&VarianceTable::single(17)).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].meta.len, 4);
        assert_eq!(w.fill(), 0);
        assert_eq!(*w.stats(0), RunningStats::default());
    }

    #[test]
    fn early_flush_is_rejected() {
        let mut w = ProcessWindow::new(vec![1.0], 2).unwrap();
        w.push(&[0.5]).unwrap();
        assert!(matches!(
            w.flush(&VarianceTable::single(0)),
            Err(MantError::WindowNotFull { fill: 1, group_size: 2 })
        ));
    }

    #[test]
    fn clamping_is_counted() {
        let mut w = ProcessWindow::new(vec![0.01], 4).unwrap();
        w.push(&[5.0]).unwrap();
        assert_eq!(w.clamped(), 1);
        assert_eq!(w.staged_row(0), &[127]);
        assert_eq!(w.stats(0).max_abs, 5.0);
    }

    #[test]
    fn width_mismatch() {
        let mut w = ProcessWindow::new(vec![1.0; 3], 4).unwrap();
        assert!(w.push(&[1.0]).is_err());
    }
}
