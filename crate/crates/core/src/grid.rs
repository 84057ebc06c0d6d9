//! MANT quantization grids and data-type approximation.
//!
//! A 4-bit MANT code is a sign bit plus a 3-bit magnitude `i`. For a
//! group-wise coefficient `a` the magnitude decodes to `a * i + 2^i`, so the
//! positive grid is `{1, a + 2, 2a + 4, ..., 7a + 128}`. At `a = 0` this is
//! exactly the power-of-two type; growing `a` moves the grid smoothly toward
//! a uniform one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MantError, Result};
use crate::probit::probit;

/// Largest admissible coefficient; `a` is stored in 8 bits.
pub const MAX_COEFFICIENT: u8 = 127;

/// Number of magnitude levels of a 4-bit sign-magnitude code.
pub const LEVELS: usize = 8;

/// Default NF epsilon. See `ReferenceCurve::new`.
pub const DEFAULT_NF_EPSILON: f64 = 0.055;

/// Positive magnitudes of the grid for one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MantGrid {
    coefficient: u8,
    magnitudes: [u32; LEVELS],
}

impl MantGrid {
    pub fn new(coefficient: u8) -> Result<Self> {
        build_grid(u32::from(coefficient))
    }

    pub fn coefficient(&self) -> u8 {
        self.coefficient
    }

    pub fn magnitudes(&self) -> &[u32; LEVELS] {
        &self.magnitudes
    }

    /// Largest magnitude, `7a + 128`.
    pub fn max_magnitude(&self) -> u32 {
        self.magnitudes[LEVELS - 1]
    }

    /// Grid magnitudes divided by the maximum, so the top level is 1.
    pub fn normalized(&self) -> [f64; LEVELS] {
        let max = f64::from(self.max_magnitude());
        self.magnitudes.map(|m| f64::from(m) / max)
    }

    /// Largest distance between adjacent positive levels.
    pub fn max_gap(&self) -> u32 {
        self.magnitudes
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }
}

/// Evaluates `magnitude[i] = a * i + 2^i` for `i = 0..8`.
pub fn build_grid(a: u32) -> Result<MantGrid> {
    if a > u32::from(MAX_COEFFICIENT) {
        return Err(MantError::CoefficientRange(a));
    }
    let mut magnitudes = [0u32; LEVELS];
    for (i, m) in magnitudes.iter_mut().enumerate() {
        *m = a * i as u32 + (1u32 << i);
    }
    Ok(MantGrid {
        coefficient: a as u8,
        magnitudes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Int,
    Pot,
    Nf,
    Float,
}

impl FromStr for CurveKind {
    type Err = MantError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int" => Ok(Self::Int),
            "pot" => Ok(Self::Pot),
            "nf" => Ok(Self::Nf),
            "float" | "fp" => Ok(Self::Float),
            _ => Err(MantError::InvalidCurveKind(s.to_string())),
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Int => "int",
            Self::Pot => "pot",
            Self::Nf => "nf",
            Self::Float => "float",
        };
        f.write_str(name)
    }
}

/// Positive magnitudes of E2M1 (sign, 2 exponent bits, 1 mantissa bit,
/// exponent bias 1, subnormals at exponent 0).
const E2M1_MAGNITUDES: [f64; LEVELS] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

/// Eight positive levels of a reference data type, normalized so the last
/// level is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCurve {
    kind: CurveKind,
    points: [f64; LEVELS],
    epsilon: Option<f64>,
}

impl ReferenceCurve {
    /// Builds the curve for `kind`. `epsilon` is only consulted for NF, where
    /// it keeps the top quantile `1 - epsilon / 2` away from 1 so the probit
    /// stays finite.
    pub fn new(kind: CurveKind, epsilon: f64) -> Result<Self> {
        let mut points = [0.0; LEVELS];
        let mut eps = None;
        match kind {
            CurveKind::Int => {
                for (i, p) in points.iter_mut().enumerate() {
                    *p = i as f64 / 7.0;
                }
            }
            CurveKind::Pot => {
                for (i, p) in points.iter_mut().enumerate() {
                    *p = f64::from(1u32 << i) / 128.0;
                }
            }
            CurveKind::Nf => {
                if !(epsilon > 0.0 && epsilon < 0.2) {
                    return Err(MantError::EpsilonRange(epsilon));
                }
                for (i, p) in points.iter_mut().enumerate() {
                    *p = probit(i as f64 * (1.0 - epsilon) * 0.5 / 7.0 + 0.5)?;
                }
                let top = points[LEVELS - 1];
                for p in &mut points {
                    *p /= top;
                }
                eps = Some(epsilon);
            }
            CurveKind::Float => {
                let top = E2M1_MAGNITUDES[LEVELS - 1];
                for (p, m) in points.iter_mut().zip(E2M1_MAGNITUDES) {
                    *p = m / top;
                }
            }
        }
        points[LEVELS - 1] = 1.0;
        Ok(Self {
            kind,
            points,
            epsilon: eps,
        })
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn points(&self) -> &[f64; LEVELS] {
        &self.points
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }
}

pub fn reference_curve(kind: CurveKind, epsilon: f64) -> Result<ReferenceCurve> {
    ReferenceCurve::new(kind, epsilon)
}

/// Aggregate used to reduce the eight per-level errors of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMetric {
    #[default]
    MeanAbsolute,
    MeanSquared,
    MaxAbsolute,
}

/// Aggregate error between `curve` and the normalized grid of `a`.
pub fn approximation_error(curve: &ReferenceCurve, a: u8, metric: FitMetric) -> f64 {
    let denom = 7.0 * f64::from(a) + 128.0;
    let diffs = curve.points.iter().enumerate().map(|(i, &y)| {
        let grid = (f64::from(a) * i as f64 + f64::from(1u32 << i)) / denom;
        (y - grid).abs()
    });
    match metric {
        FitMetric::MeanAbsolute => diffs.sum::<f64>() / LEVELS as f64,
        FitMetric::MeanSquared => diffs.map(|d| d * d).sum::<f64>() / LEVELS as f64,
        FitMetric::MaxAbsolute => diffs.fold(0.0, f64::max),
    }
}

/// Exhaustive search over `a = 0..=127` for the coefficient whose normalized
/// grid best matches `curve`. Ties go to the smaller coefficient.
pub fn fit_coefficient(curve: &ReferenceCurve) -> u8 {
    fit_coefficient_with(curve, FitMetric::MeanAbsolute)
}

pub fn fit_coefficient_with(curve: &ReferenceCurve, metric: FitMetric) -> u8 {
    let mut best = 0u8;
    let mut best_err = f64::INFINITY;
    for a in 0..=MAX_COEFFICIENT {
        let err = approximation_error(curve, a, metric);
        if err < best_err {
            best = a;
            best_err = err;
        }
    }
    best
}
