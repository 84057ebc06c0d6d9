//! Variance-driven coefficient selection for KV-cache groups.
//!
//! Each group is normalized by its absolute maximum and its variance
//! `E[x^2] - E[x]^2` is looked up in a calibrated table that assigns a
//! contiguous variance range to every coefficient. Larger coefficients give
//! flatter grids and therefore own higher-variance ranges.

use serde::{Deserialize, Serialize};

use crate::codec::{code_level, encode_value, round_scale, GroupFormat};
use crate::error::{MantError, Result};

/// Single-pass accumulator for max |x|, sum x and sum x^2.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: usize,
    pub max_abs: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RunningStats {
    pub fn from_values(values: &[f32]) -> Self {
        let mut s = Self::default();
        for &v in values {
            s.push(f64::from(v));
        }
        s
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.max_abs = self.max_abs.max(x.abs());
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        (self.sum_sq / n - mean * mean).max(0.0)
    }

    /// Variance of `x / max|x|`, i.e. `variance / max^2`. Zero for an
    /// all-zero group.
    pub fn normalized_variance(&self) -> f64 {
        if self.max_abs == 0.0 {
            return 0.0;
        }
        self.variance() / (self.max_abs * self.max_abs)
    }
}

pub fn normalized_variance(values: &[f32]) -> f64 {
    RunningStats::from_values(values).normalized_variance()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRange {
    pub a: u8,
    pub lo: f64,
    pub hi: f64,
}

/// Contiguous partition of `[0, 1]` into per-coefficient variance ranges.
/// Every range is half-open `[lo, hi)` except the last, which also holds
/// `hi = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VarianceRange>", into = "Vec<VarianceRange>")]
pub struct VarianceTable {
    entries: Vec<VarianceRange>,
}

impl TryFrom<Vec<VarianceRange>> for VarianceTable {
    type Error = MantError;

    fn try_from(entries: Vec<VarianceRange>) -> Result<Self> {
        Self::from_entries(entries)
    }
}

impl From<VarianceTable> for Vec<VarianceRange> {
    fn from(t: VarianceTable) -> Self {
        t.entries
    }
}

impl VarianceTable {
    pub fn from_entries(entries: Vec<VarianceRange>) -> Result<Self> {
        let bad = |msg: String| Err(MantError::InsufficientCalibration(msg));
        let (Some(first), Some(last)) = (entries.first(), entries.last()) else {
            return bad("variance table has no entries".into());
        };
        if first.lo != 0.0 || last.hi != 1.0 {
            return bad(format!("ranges must span [0, 1], got [{}, {}]", first.lo, last.hi));
        }
        for e in &entries {
            if e.a > 127 {
                return Err(MantError::CoefficientRange(u32::from(e.a)));
            }
            if e.lo.is_nan() || e.hi.is_nan() || e.lo > e.hi {
                return bad(format!("inverted range for a = {}", e.a));
            }
        }
        for w in entries.windows(2) {
            if w[0].hi != w[1].lo || w[0].a >= w[1].a {
                return bad(format!(
                    "ranges for a = {} and a = {} are not contiguous and ascending",
                    w[0].a, w[1].a
                ));
            }
        }
        Ok(Self { entries })
    }

    /// One coefficient covering every variance.
    pub fn single(a: u8) -> Self {
        Self {
            entries: vec![VarianceRange { a, lo: 0.0, hi: 1.0 }],
        }
    }

    /// Builds the table from calibrated mean variances.
    ///
    /// `anchors` are `(a, mean normalized variance)` samples of the
    /// variance-vs-coefficient curve. The boundary between neighboring
    /// candidates `c_i < c_j` is the curve's value at the half-way
    /// coefficient `(c_i + c_j) / 2`, read off the anchors by piecewise
    /// linear interpolation (flat beyond the outermost anchors). With
    /// candidates 30, 40, 50 and anchors at 35 and 45, coefficient 40 owns
    /// exactly `[mean(35), mean(45))`. Boundaries are forced non-decreasing;
    /// candidates whose range collapses are merged into their neighbors.
    pub fn from_anchor_means(candidates: &[u8], anchors: &[(f64, f64)]) -> Result<Self> {
        let mut cands = candidates.to_vec();
        cands.sort_unstable();
        cands.dedup();
        let Some(&top) = cands.last() else {
            return Err(MantError::EmptyCandidates);
        };
        if top > 127 {
            return Err(MantError::CoefficientRange(u32::from(top)));
        }
        if cands.len() == 1 {
            return Ok(Self::single(top));
        }
        let mut pts: Vec<(f64, f64)> = anchors.to_vec();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        if pts.is_empty() {
            return Err(MantError::InsufficientCalibration("no variance anchors".into()));
        }
        let mut boundaries = Vec::with_capacity(cands.len() - 1);
        let mut floor = 0.0f64;
        for w in cands.windows(2) {
            let mid = (f64::from(w[0]) + f64::from(w[1])) / 2.0;
            let b = interpolate(&pts, mid).clamp(0.0, 1.0).max(floor);
            floor = b;
            boundaries.push(b);
        }
        let mut entries = Vec::with_capacity(cands.len());
        let mut lo = 0.0;
        for (i, &a) in cands.iter().enumerate() {
            let hi = boundaries.get(i).copied().unwrap_or(1.0);
            let is_last = i + 1 == cands.len();
            if lo < hi || is_last {
                entries.push(VarianceRange { a, lo, hi });
                lo = hi;
            }
        }
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> &[VarianceRange] {
        &self.entries
    }

    /// Coefficient whose range contains `variance`. Values below 0 map to
    /// the first range and values at or above 1 to the last.
    pub fn select(&self, variance: f64) -> u8 {
        self.entries
            .iter()
            .find(|e| variance < e.hi)
            .unwrap_or_else(|| self.entries.last().expect("table is never empty"))
            .a
    }

    pub fn smallest(&self) -> u8 {
        self.entries[0].a
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn interpolate(pts: &[(f64, f64)], x: f64) -> f64 {
    let idx = pts.partition_point(|p| p.0 < x);
    if let Some(&(a, m)) = pts.get(idx) {
        if a == x {
            return m;
        }
    }
    if idx == 0 {
        return pts[0].1;
    }
    if idx == pts.len() {
        return pts[pts.len() - 1].1;
    }
    let (x0, y0) = pts[idx - 1];
    let (x1, y1) = pts[idx];
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

/// Selects a coefficient for `values` from `table`. An all-zero group maps
/// to the smallest coefficient.
pub fn select_by_variance(values: &[f32], table: &VarianceTable) -> u8 {
    select_from_stats(&RunningStats::from_values(values), table)
}

pub fn select_from_stats(stats: &RunningStats, table: &VarianceTable) -> u8 {
    if stats.max_abs == 0.0 {
        return table.smallest();
    }
    table.select(stats.normalized_variance())
}

/// Mean normalized variance of the calibration groups labeled with one
/// coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub a: u8,
    pub mean_variance: f64,
    pub count: usize,
}

/// Coefficient in `range` minimizing the group's squared quantization
/// error; ties go to the smaller coefficient.
pub fn best_coefficient(values: &[f32], range: std::ops::RangeInclusive<u8>) -> u8 {
    let absmax = values.iter().fold(0.0f64, |m, &v| m.max(f64::from(v.abs())));
    let start = *range.start();
    if absmax == 0.0 {
        return start;
    }
    let mut best = (start, f64::INFINITY);
    for a in range {
        let format = GroupFormat::Mant(a);
        let scale = round_scale(absmax / f64::from(format.max_level()));
        let levels = format.levels();
        let err: f64 = values
            .iter()
            .map(|&v| {
                let c = encode_value(v, scale, &levels);
                let q = f64::from(code_level(c, &levels) as f32 * scale);
                (q - f64::from(v)).powi(2)
            })
            .sum();
        if err < best.1 {
            best = (a, err);
        }
    }
    best.0
}

/// Labels every calibration group with its error-minimizing coefficient
/// over `range` and averages the normalized variance per label.
pub fn calibrate_variance_curve<'a, I>(groups: I, range: std::ops::RangeInclusive<u8>) -> Vec<CurvePoint>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut sums = [(0.0f64, 0usize); 128];
    for g in groups {
        let a = best_coefficient(g, range.clone());
        let slot = &mut sums[usize::from(a)];
        slot.0 += normalized_variance(g);
        slot.1 += 1;
    }
    sums.iter()
        .enumerate()
        .filter(|(_, s)| s.1 > 0)
        .map(|(a, s)| CurvePoint {
            a: a as u8,
            mean_variance: s.0 / s.1 as f64,
            count: s.1,
        })
        .collect()
}

/// Calibrates a variance table for `candidates`.
///
/// Groups are labeled over every integer coefficient between the smallest
/// and largest candidate, so the curve can be read at the half-way points
/// between candidates. Labels seen fewer than `min_samples` times are not
/// used as anchors.
pub fn build_variance_table(groups: &[Vec<f32>], candidates: &[u8], min_samples: usize) -> Result<VarianceTable> {
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let (Some(&lo), Some(&hi)) = (cands.first(), cands.last()) else {
        return Err(MantError::EmptyCandidates);
    };
    if hi > 127 {
        return Err(MantError::CoefficientRange(u32::from(hi)));
    }
    if groups.len() < min_samples.max(1) {
        return Err(MantError::InsufficientCalibration(format!(
            "{} calibration groups, need at least {}",
            groups.len(),
            min_samples.max(1)
        )));
    }
    if cands.len() == 1 {
        return Ok(VarianceTable::single(lo));
    }
    let curve = calibrate_variance_curve(groups.iter().map(Vec::as_slice), lo..=hi);
    let anchors: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.count >= min_samples)
        .map(|p| (f64::from(p.a), p.mean_variance))
        .collect();
    if anchors.is_empty() {
        return Err(MantError::InsufficientCalibration(format!(
            "no coefficient labeled at least {min_samples} times"
        )));
    }
    VarianceTable::from_anchor_means(&cands, &anchors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_boundary_example() {
        let t = VarianceTable::from_anchor_means(&[30, 40, 50], &[(35.0, 0.104), (45.0, 0.118)]).unwrap();
        let mid = t.entries().iter().find(|e| e.a == 40).unwrap();
        assert_eq!((mid.lo, mid.hi), (0.104, 0.118));
        assert_eq!(t.select(0.104), 40);
        assert_eq!(t.select(0.118), 50);
        assert_eq!(t.select(0.1039), 30);
    }

    #[test]
    fn single_candidate_covers_everything() {
        let t = VarianceTable::from_anchor_means(&[17], &[]).unwrap();
        assert_eq!(t.entries(), &[VarianceRange { a: 17, lo: 0.0, hi: 1.0 }]);
        assert_eq!(t.select(0.0), 17);
        assert_eq!(t.select(1.0), 17);
    }

    #[test]
    fn collapsed_ranges_merge() {
        // Decreasing anchors force equal boundaries; the middle candidate
        // disappears and the table stays a partition.
        let t = VarianceTable::from_anchor_means(&[0, 10, 20], &[(5.0, 0.3), (15.0, 0.2)]).unwrap();
        let a: Vec<u8> = t.entries().iter().map(|e| e.a).collect();
        assert_eq!(a, vec![0, 20]);
        assert_eq!(t.entries()[0].hi, 0.3);
    }

    #[test]
    fn alternating_signs_hit_top_range() {
        let t = VarianceTable::from_anchor_means(&[0, 40, 120], &[(20.0, 0.05), (80.0, 0.2)]).unwrap();
        assert_eq!(normalized_variance(&[1.0, -1.0, 1.0, -1.0]), 1.0);
        assert_eq!(select_by_variance(&[1.0, -1.0, 1.0, -1.0], &t), 120);
        assert_eq!(select_by_variance(&[3.0; 8], &t), 0);
        assert_eq!(select_by_variance(&[0.0; 8], &t), 0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let t = VarianceTable::from_anchor_means(&[0, 40, 120], &[(20.0, 0.05), (80.0, 0.2)]).unwrap();
        let s = t.to_json().unwrap();
        assert_eq!(VarianceTable::from_json(&s).unwrap(), t);
        let gap = r#"[{"a":0,"lo":0.0,"hi":0.1},{"a":5,"lo":0.2,"hi":1.0}]"#;
        assert!(VarianceTable::from_json(gap).is_err());
    }

    #[test]
    fn insufficient_calibration() {
        let groups = vec![vec![1.0f32; 8]; 3];
        assert!(matches!(
            build_variance_table(&groups, &[0, 10], 32),
            Err(MantError::InsufficientCalibration(_))
        ));
        assert!(matches!(build_variance_table(&groups, &[], 1), Err(MantError::EmptyCandidates)));
    }

    #[test]
    fn scale_invariance() {
        let g: Vec<f32> = (0..64).map(|i| ((i * 37 % 17) as f32 - 8.0) * 0.3).collect();
        let base = normalized_variance(&g);
        for c in [0.001f32, 0.5, 4.0, 1000.0] {
            let scaled: Vec<f32> = g.iter().map(|v| v * c).collect();
            assert!((normalized_variance(&scaled) - base).abs() < 1e-6);
        }
    }
}
