//! Offline per-group data-type selection for weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{dequantize_4bit, quantize_4bit_group, GroupFormat, GroupLayout, QuantizedTensor, Tensor};
use crate::error::{MantError, Result};

/// Default coefficient candidates for weights.
pub const DEFAULT_COEFFICIENTS: [u8; 15] = [0, 5, 10, 17, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120];

/// Ordered coefficient candidates, optionally extended with plain INT4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    coefficients: Vec<u8>,
    include_int: bool,
}

impl CandidateSet {
    pub fn new(mut coefficients: Vec<u8>, include_int: bool) -> Result<Self> {
        coefficients.sort_unstable();
        coefficients.dedup();
        if let Some(&bad) = coefficients.iter().find(|&&a| a > 127) {
            return Err(MantError::CoefficientRange(u32::from(bad)));
        }
        if coefficients.is_empty() && !include_int {
            return Err(MantError::EmptyCandidates);
        }
        Ok(Self {
            coefficients,
            include_int,
        })
    }

    /// The sixteen weight types: fifteen coefficients plus INT4.
    pub fn weights() -> Self {
        Self {
            coefficients: DEFAULT_COEFFICIENTS.to_vec(),
            include_int: true,
        }
    }

    /// Coefficients only; KV groups are always MANT.
    pub fn kv() -> Self {
        Self {
            coefficients: DEFAULT_COEFFICIENTS.to_vec(),
            include_int: false,
        }
    }

    /// Parses a comma-separated list such as `0,5,10,int`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut coefficients = Vec::new();
        let mut include_int = false;
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if token.eq_ignore_ascii_case("int") {
                include_int = true;
                continue;
            }
            let a: u32 = token
                .parse()
                .map_err(|_| MantError::InvalidCurveKind(token.to_string()))?;
            if a > 127 {
                return Err(MantError::CoefficientRange(a));
            }
            coefficients.push(a as u8);
        }
        Self::new(coefficients, include_int)
    }

    pub fn coefficients(&self) -> &[u8] {
        &self.coefficients
    }

    pub fn include_int(&self) -> bool {
        self.include_int
    }

    /// Candidates in selection order: coefficients ascending, INT4 last.
    pub fn formats(&self) -> Vec<GroupFormat> {
        let mut f: Vec<_> = self.coefficients.iter().map(|&a| GroupFormat::Mant(a)).collect();
        if self.include_int {
            f.push(GroupFormat::Int4);
        }
        f
    }

    pub fn len(&self) -> usize {
        self.coefficients.len() + usize::from(self.include_int)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for CandidateSet {
    fn default() -> Self {
        Self::weights()
    }
}

/// Calibration inputs for one weight group.
#[derive(Debug, Clone, Copy)]
pub enum Calibration<'a> {
    /// Squared error of the weights themselves (identity inputs).
    WeightSpace,
    /// `rows` activation rows of the group's length, row-major.
    Activations { data: &'a [f32], rows: usize },
}

/// `|| X (W_hat - W) ||^2` for one group and one format.
pub fn output_error(w_group: &[f32], format: GroupFormat, calib: Calibration<'_>) -> Result<f64> {
    let (codes, meta) = quantize_4bit_group(w_group, format)?;
    let deq = dequantize_4bit(&codes, &meta)?;
    let delta: Vec<f64> = deq
        .iter()
        .zip(w_group)
        .map(|(&q, &w)| f64::from(q) - f64::from(w))
        .collect();
    match calib {
        Calibration::WeightSpace => Ok(delta.iter().map(|d| d * d).sum()),
        Calibration::Activations { data, rows } => {
            let n = w_group.len();
            if data.len() != rows * n {
                return Err(MantError::LengthMismatch {
                    expected: rows * n,
                    actual: data.len(),
                });
            }
            Ok(data
                .chunks_exact(n.max(1))
                .take(rows)
                .map(|x| {
                    let y: f64 = x.iter().zip(&delta).map(|(&a, d)| f64::from(a) * d).sum();
                    y * y
                })
                .sum())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub format: GroupFormat,
    pub error: f64,
}

/// Exact argmin of [`output_error`] over the candidate set. Ties go to the
/// earlier candidate (smaller `a`, INT4 last).
pub fn select_weight_coefficient(
    w_group: &[f32],
    calib: Calibration<'_>,
    candidates: &CandidateSet,
) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    for format in candidates.formats() {
        let error = output_error(w_group, format, calib)?;
        if best.is_none_or(|b| error < b.error) {
            best = Some(Selection { format, error });
        }
    }
    best.ok_or(MantError::EmptyCandidates)
}

/// Quantizes a K x N weight matrix in groups along K, choosing each group's
/// format independently. `calib`, when given, is an R x K activation sample;
/// each group is scored against the matching slice of its columns.
pub fn quantize_weight_matrix(
    weights: &Tensor,
    calib: Option<&Tensor>,
    group_size: usize,
    candidates: &CandidateSet,
) -> Result<QuantizedTensor> {
    if weights.dims().len() != 2 {
        return Err(MantError::ShapeMismatch("weights must be 2-D (K x N)".into()));
    }
    let k = weights.dims()[0];
    let layout = GroupLayout::new(weights.dims(), 0, group_size)?;
    let slices: Option<(usize, Vec<Vec<f32>>)> = match calib {
        None => None,
        Some(x) => {
            if x.dims().len() != 2 || x.dims()[1] != k {
                return Err(MantError::ShapeMismatch(format!(
                    "calibration must be R x {k}, got {:?}",
                    x.dims()
                )));
            }
            let rows = x.dims()[0];
            let per_group = (0..layout.groups_per_fiber())
                .map(|g| {
                    let range = layout.group_range(g);
                    (0..rows)
                        .flat_map(|r| x.data()[r * k + range.start..r * k + range.end].iter().copied())
                        .collect()
                })
                .collect();
            Some((rows, per_group))
        }
    };
    let gpf = layout.groups_per_fiber();
    let formats: Vec<GroupFormat> = (0..layout.group_count())
        .into_par_iter()
        .map(|i| {
            let values = layout.gather(weights.data(), i);
            let c = match &slices {
                None => Calibration::WeightSpace,
                Some((rows, per_group)) => Calibration::Activations {
                    data: &per_group[i % gpf],
                    rows: *rows,
                },
            };
            select_weight_coefficient(&values, c, candidates).map(|s| s.format)
        })
        .collect::<Result<_>>()?;
    QuantizedTensor::quantize_four_bit(weights, 0, group_size, |i, _| Ok(formats[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_set_has_sixteen_types() {
        let c = CandidateSet::weights();
        assert_eq!(c.len(), 16);
        assert_eq!(c.formats().last(), Some(&GroupFormat::Int4));
        assert!(c.coefficients().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn parse_candidates() {
        let c = CandidateSet::parse("40, 0,17,int").unwrap();
        assert_eq!(c.coefficients(), &[0, 17, 40]);
        assert!(c.include_int());
        assert!(CandidateSet::parse("").is_err());
        assert!(CandidateSet::parse("200").is_err());
    }

    #[test]
    fn empty_candidates_error() {
        assert!(matches!(CandidateSet::new(vec![], false), Err(MantError::EmptyCandidates)));
    }

    #[test]
    fn on_grid_group_selects_pot() {
        let group: Vec<f32> = [128.0, -64.0, 32.0, 1.0, -2.0, 16.0, 4.0, -8.0]
            .iter()
            .map(|v| v * 0.125)
            .collect();
        let s = select_weight_coefficient(&group, Calibration::WeightSpace, &CandidateSet::weights()).unwrap();
        assert_eq!(s.format, GroupFormat::Mant(0));
        assert_eq!(s.error, 0.0);
    }

    #[test]
    fn calibration_shape_is_checked() {
        let w = [1.0f32, 2.0];
        let c = Calibration::Activations { data: &[1.0, 2.0, 3.0], rows: 2 };
        assert!(output_error(&w, GroupFormat::Mant(0), c).is_err());
    }
}
