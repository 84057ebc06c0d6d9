//! Per-group encoders and decoders.
//!
//! Scales are rounded to IEEE half precision before codes are chosen, so the
//! in-memory metadata is exactly what the container stores.

use half::f16;
use serde::{Deserialize, Serialize};

use super::code::MantCode;
use crate::error::{MantError, Result};
use crate::grid::{build_grid, LEVELS};

/// Numeric interpretation of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFormat {
    /// 4-bit MANT with coefficient `a` in `0..=127`.
    Mant(u8),
    /// Plain sign-magnitude INT4 (levels `0..=7`).
    Int4,
    /// Symmetric INT8 (codes `-127..=127`).
    Int8,
}

const INT4_MARKER: u8 = 0x80;
const INT8_MARKER: u8 = 0xff;

impl GroupFormat {
    /// Metadata byte: `a` for MANT, `0x80` for INT4, `0xff` for INT8.
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Mant(a) => a,
            Self::Int4 => INT4_MARKER,
            Self::Int8 => INT8_MARKER,
        }
    }

    pub fn from_byte(byte: u8) -> Result<Self> {
        match byte {
            0..=127 => Ok(Self::Mant(byte)),
            INT4_MARKER => Ok(Self::Int4),
            INT8_MARKER => Ok(Self::Int8),
            other => Err(MantError::Format(format!(
                "unknown group format byte {other:#04x}"
            ))),
        }
    }

    pub fn is_four_bit(self) -> bool {
        !matches!(self, Self::Int8)
    }

    /// Magnitude levels of a 4-bit format.
    ///
    /// # Panics
    /// For `Int8`, or a MANT coefficient above 127.
    pub fn levels(self) -> [u32; LEVELS] {
        match self {
            Self::Mant(a) => *build_grid(u32::from(a))
                .expect("coefficient validated on construction")
                .magnitudes(),
            Self::Int4 => [0, 1, 2, 3, 4, 5, 6, 7],
            Self::Int8 => panic!("INT8 groups have no 4-bit levels"),
        }
    }

    /// Largest representable magnitude before scaling.
    pub fn max_level(self) -> u32 {
        match self {
            Self::Mant(a) => 7 * u32::from(a) + 128,
            Self::Int4 => 7,
            Self::Int8 => 127,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mant(_) => "MANT4",
            Self::Int4 => "INT4",
            Self::Int8 => "INT8",
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Self::Mant(a) if a > 127 => Err(MantError::CoefficientRange(u32::from(a))),
            _ => Ok(()),
        }
    }
}

/// Metadata carried by every group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMeta {
    /// Always a value representable in IEEE half precision. Zero only for
    /// all-zero groups.
    pub scale: f32,
    pub format: GroupFormat,
    /// True number of elements; the last group along an axis may be short.
    pub len: usize,
}

/// Rounds a positive scale to half precision. Nonzero scales never round to
/// zero (they clamp to the smallest subnormal) and overflow saturates to the
/// largest finite half.
pub fn round_scale(scale: f64) -> f32 {
    if scale == 0.0 {
        return 0.0;
    }
    let h = f16::from_f64(scale);
    if h == f16::ZERO {
        f16::from_bits(1).to_f32()
    } else if h.is_infinite() {
        f16::MAX.to_f32()
    } else {
        h.to_f32()
    }
}

fn check_finite(values: &[f32]) -> Result<f64> {
    let mut absmax = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(MantError::NonFinite(i));
        }
        absmax = absmax.max(f64::from(v.abs()));
    }
    Ok(absmax)
}

/// Nearest 4-bit code to `value / scale` among `levels`. Magnitude ties go
/// to the smaller level; a zero level is always emitted with a positive sign.
#[inline]
pub fn encode_value(value: f32, scale: f32, levels: &[u32; LEVELS]) -> MantCode {
    let t = f64::from(value).abs() / f64::from(scale);
    let mut best = 0usize;
    let mut best_dist = (t - f64::from(levels[0])).abs();
    for (m, &level) in levels.iter().enumerate().skip(1) {
        let dist = (t - f64::from(level)).abs();
        if dist < best_dist {
            best = m;
            best_dist = dist;
        } else if f64::from(level) > t {
            break;
        }
    }
    let negative = value < 0.0 && levels[best] != 0;
    MantCode::new(negative, best as u8)
}

/// Encodes a group in a 4-bit format (MANT or INT4):
/// `scale = max|v| / max_level`, each code the nearest signed level.
pub fn quantize_4bit_group(values: &[f32], format: GroupFormat) -> Result<(Vec<MantCode>, GroupMeta)> {
    if !format.is_four_bit() {
        return Err(MantError::KindMismatch {
            expected: "MANT4 or INT4",
            actual: format.name(),
        });
    }
    format.validate()?;
    let absmax = check_finite(values)?;
    let scale = round_scale(absmax / f64::from(format.max_level()));
    let meta = GroupMeta {
        scale,
        format,
        len: values.len(),
    };
    if scale == 0.0 {
        return Ok((vec![MantCode::ZERO; values.len()], meta));
    }
    let levels = format.levels();
    let codes = values
        .iter()
        .map(|&v| encode_value(v, scale, &levels))
        .collect();
    Ok((codes, meta))
}

/// MANT weight/KV encoding with coefficient `a`.
pub fn quantize_weight_group(values: &[f32], a: u8) -> Result<(Vec<MantCode>, GroupMeta)> {
    if a > 127 {
        return Err(MantError::CoefficientRange(u32::from(a)));
    }
    quantize_4bit_group(values, GroupFormat::Mant(a))
}

/// Symmetric rounding of a single value, half away from zero.
pub fn quantize_symmetric(value: f64, scale: f64) -> i64 {
    (value / scale).round() as i64
}

pub fn dequantize_symmetric(code: i64, scale: f64) -> f64 {
    code as f64 * scale
}

/// Group-wise INT8 with `scale = max|v| / 127`. Codes are computed as
/// `round(127 * v / max|v|)`, so they never leave `[-127, 127]`.
pub fn quantize_activation_group(values: &[f32]) -> Result<(Vec<i8>, GroupMeta)> {
    let absmax = check_finite(values)?;
    let scale = round_scale(absmax / 127.0);
    let meta = GroupMeta {
        scale,
        format: GroupFormat::Int8,
        len: values.len(),
    };
    if absmax == 0.0 {
        return Ok((vec![0; values.len()], meta));
    }
    let codes = values
        .iter()
        .map(|&v| (127.0 * (f64::from(v) / absmax)).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok((codes, meta))
}

/// INT8 encoding against a fixed, externally supplied scale. Returns the
/// codes and the number of values that had to be clamped to +/-127.
/// A zero scale produces a zero row.
pub fn quantize_int8_with_scale(values: &[f32], scale: f32) -> Result<(Vec<i8>, usize)> {
    check_finite(values)?;
    if scale == 0.0 {
        return Ok((vec![0; values.len()], 0));
    }
    let mut clamped = 0;
    let codes = values
        .iter()
        .map(|&v| {
            let q = (f64::from(v) / f64::from(scale)).round();
            if q.abs() > 127.0 {
                clamped += 1;
            }
            q.clamp(-127.0, 127.0) as i8
        })
        .collect();
    Ok((codes, clamped))
}

/// Decoded value of one 4-bit code, before the scale is applied.
#[inline]
pub fn code_level(code: MantCode, levels: &[u32; LEVELS]) -> i32 {
    code.sign() * levels[usize::from(code.magnitude())] as i32
}

/// Borrowed codes of either element kind.
#[derive(Debug, Clone, Copy)]
pub enum CodesRef<'a> {
    FourBit(&'a [MantCode]),
    Int8(&'a [i8]),
}

/// `sign * level * scale` for 4-bit groups, `code * scale` for INT8 groups.
/// A zero scale decodes to zeros.
pub fn dequantize_group(codes: CodesRef<'_>, meta: &GroupMeta) -> Result<Vec<f32>> {
    match codes {
        CodesRef::FourBit(c) => dequantize_4bit(c, meta),
        CodesRef::Int8(c) => dequantize_int8(c, meta),
    }
}

pub fn dequantize_4bit(codes: &[MantCode], meta: &GroupMeta) -> Result<Vec<f32>> {
    if !meta.format.is_four_bit() {
        return Err(MantError::KindMismatch {
            expected: "MANT4 or INT4",
            actual: meta.format.name(),
        });
    }
    meta.format.validate()?;
    if meta.scale == 0.0 {
        return Ok(vec![0.0; codes.len()]);
    }
    let levels = meta.format.levels();
    Ok(codes
        .iter()
        .map(|&c| code_level(c, &levels) as f32 * meta.scale)
        .collect())
}

pub fn dequantize_int8(codes: &[i8], meta: &GroupMeta) -> Result<Vec<f32>> {
    if meta.format != GroupFormat::Int8 {
        return Err(MantError::KindMismatch {
            expected: "INT8",
            actual: meta.format.name(),
        });
    }
    Ok(codes.iter().map(|&c| f32::from(c) * meta.scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powers_of_two_on_pot_grid() {
        let (codes, meta) = quantize_weight_group(&[1.0, 0.5, 0.25, -0.125], 0).unwrap();
        assert_eq!(meta.scale, 1.0 / 128.0);
        assert_eq!(
            codes,
            vec![
                MantCode::positive(7),
                MantCode::positive(6),
                MantCode::positive(5),
                MantCode::negative(4)
            ]
        );
    }

    #[test]
    fn all_zero_group() {
        for a in [0, 17, 40, 127] {
            let (codes, meta) = quantize_weight_group(&[0.0; 8], a).unwrap();
            assert_eq!(meta.scale, 0.0);
            assert!(codes.iter().all(|&c| c == MantCode::ZERO));
            let back = dequantize_4bit(&codes, &meta).unwrap();
            assert!(back.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_coefficient() {
        assert!(matches!(
            quantize_weight_group(&[1.0, f32::NAN], 3),
            Err(MantError::NonFinite(1))
        ));
        assert!(matches!(
            quantize_activation_group(&[f32::INFINITY]),
            Err(MantError::NonFinite(0))
        ));
        assert!(quantize_weight_group(&[1.0], 128).is_err());
    }

    #[test]
    fn negative_zero_is_positive_code() {
        let (codes, _) = quantize_weight_group(&[-0.0, 4.0], 5).unwrap();
        assert_eq!(codes[0], MantCode::ZERO);
    }

    #[test]
    fn small_negative_int4_rounds_to_positive_zero() {
        let (codes, _) = quantize_4bit_group(&[7.0, -0.2], GroupFormat::Int4).unwrap();
        assert_eq!(codes[1], MantCode::ZERO);
    }

    #[test]
    fn activation_rounding_away_from_zero() {
        let (codes, meta) = quantize_activation_group(&[2.54, -1.27]).unwrap();
        assert_eq!(codes, vec![127, -64]);
        assert!((meta.scale - 0.02).abs() < 0.02 / 1024.0);
        assert_eq!(meta.format, GroupFormat::Int8);
    }

    #[test]
    fn activation_all_zero() {
        let (codes, meta) = quantize_activation_group(&[0.0; 5]).unwrap();
        assert_eq!(meta.scale, 0.0);
        assert!(codes.iter().all(|&c| c == 0));
    }

    #[test]
    fn symmetric_round_trip_on_grid() {
        let q = quantize_symmetric(2.5, 0.5);
        assert_eq!(q, 5);
        assert_eq!(dequantize_symmetric(q, 0.5), 2.5);
        assert_eq!(quantize_symmetric(-63.5, 1.0), -64);
    }

    #[test]
    fn dequantize_mant_value() {
        let meta = GroupMeta {
            scale: 0.1,
            format: GroupFormat::Mant(17),
            len: 1,
        };
        let v = dequantize_4bit(&[MantCode::negative(3)], &meta).unwrap();
        assert!((v[0] + 5.9).abs() < 1e-6);

        let zero = GroupMeta {
            scale: 0.0,
            format: GroupFormat::Mant(40),
            len: 1,
        };
        assert_eq!(dequantize_4bit(&[MantCode::ZERO], &zero).unwrap(), vec![0.0]);
    }

    #[test]
    fn kind_mismatch() {
        let meta = GroupMeta {
            scale: 1.0,
            format: GroupFormat::Int8,
            len: 1,
        };
        assert!(dequantize_group(CodesRef::FourBit(&[MantCode::ZERO]), &meta).is_err());
        let meta4 = GroupMeta {
            format: GroupFormat::Mant(0),
            ..meta
        };
        assert!(dequantize_group(CodesRef::Int8(&[1]), &meta4).is_err());
    }

    #[test]
    fn fixed_scale_int8_clamps_and_counts() {
        let (codes, clamped) = quantize_int8_with_scale(&[1.0, -3.0, 0.26], 0.01).unwrap();
        assert_eq!(codes, vec![100, -127, 26]);
        assert_eq!(clamped, 1);
        let (zeros, _) = quantize_int8_with_scale(&[1.0, 2.0], 0.0).unwrap();
        assert_eq!(zeros, vec![0, 0]);
    }

    #[test]
    fn scale_rounding_policy() {
        assert_eq!(round_scale(0.0), 0.0);
        assert!(round_scale(1e-12) > 0.0);
        assert_eq!(round_scale(1e9), 65504.0);
        assert_eq!(round_scale(0.25), 0.25);
    }

    #[test]
    fn format_bytes() {
        for f in [GroupFormat::Mant(0), GroupFormat::Mant(127), GroupFormat::Int4, GroupFormat::Int8] {
            assert_eq!(GroupFormat::from_byte(f.to_byte()).unwrap(), f);
        }
        assert!(GroupFormat::from_byte(0x90).is_err());
    }
}
