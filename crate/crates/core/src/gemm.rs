//! Matrix multiplication on quantized operands.
//!
//! For an INT8 activation group `x` and a MANT weight group `w` with
//! coefficient `a`, the group dot product splits into two integer sums:
//!
//! ```text
//! sum_j x_j * s_j * (a * m_j + 2^m_j) = a * psum1 + psum2
//! psum1 = sum_j x_j * s_j * m_j        (multiply-accumulate)
//! psum2 = sum_j (x_j * s_j) << m_j     (shift-accumulate)
//! ```
//!
//! where `s_j` is the code's sign and `m_j` its magnitude. Scales are applied
//! once per group after the integer part is complete.

use rayon::prelude::*;

use crate::codec::{ElementKind, GroupFormat, MantCode, QuantizedTensor};
use crate::error::{MantError, Result};

/// Integer partial sums of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupDot {
    pub psum1: i32,
    pub psum2: i32,
}

/// Computes both partial sums with integer multiplies and shifts only.
pub fn fused_group_dot(x: &[i8], w: &[MantCode]) -> Result<GroupDot> {
    if x.len() != w.len() {
        return Err(MantError::LengthMismatch {
            expected: x.len(),
            actual: w.len(),
        });
    }
    let mut psum1 = 0i32;
    let mut psum2 = 0i32;
    for (&xv, &code) in x.iter().zip(w) {
        let signed = if code.is_negative() {
            -i32::from(xv)
        } else {
            i32::from(xv)
        };
        let m = u32::from(code.magnitude());
        psum1 += signed * m as i32;
        psum2 += signed << m;
    }
    debug_assert!(x.len() > 64 || (psum1.abs() < 1 << 16 && psum2.abs() < 1 << 21));
    Ok(GroupDot { psum1, psum2 })
}

/// Scales a group's partial sums into a real contribution. The integer
/// combination `a * psum1 + psum2` is formed exactly before any scaling.
pub fn combine(dot: GroupDot, format: GroupFormat, x_scale: f32, w_scale: f32) -> f64 {
    let integer = match format {
        GroupFormat::Mant(a) => i64::from(dot.psum1) * i64::from(a) + i64::from(dot.psum2),
        GroupFormat::Int4 => i64::from(dot.psum1),
        GroupFormat::Int8 => panic!("INT8 groups use int8_group_dot"),
    };
    integer as f64 * f64::from(x_scale) * f64::from(w_scale)
}

/// Plain integer dot product of two INT8 groups.
pub fn int8_group_dot(x: &[i8], y: &[i8]) -> Result<i32> {
    if x.len() != y.len() {
        return Err(MantError::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(&a, &b)| i32::from(a) * i32::from(b))
        .sum())
}

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Normwise relative deviation `max|a - b| / max|b|`.
    pub fn relative_error(&self, reference: &Matrix) -> f64 {
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = reference.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Checks that `x` (M x K) and `w` (K x N) are both grouped along K with
/// the same group size, returning (M, K, N).
fn check_operands(x: &QuantizedTensor, w: &QuantizedTensor) -> Result<(usize, usize, usize)> {
    if x.dims().len() != 2 || w.dims().len() != 2 {
        return Err(MantError::ShapeMismatch("operands must be 2-D".into()));
    }
    let (m, k) = (x.dims()[0], x.dims()[1]);
    let (k2, n) = (w.dims()[0], w.dims()[1]);
    if k != k2 {
        return Err(MantError::ShapeMismatch(format!(
            "inner dimensions differ: {k} vs {k2}"
        )));
    }
    if x.group_axis() != 1 || w.group_axis() != 0 {
        return Err(MantError::GroupMisaligned(format!(
            "activations must be grouped along axis 1 and weights along axis 0, got {} and {}",
            x.group_axis(),
            w.group_axis()
        )));
    }
    if x.group_size() != w.group_size() {
        return Err(MantError::GroupMisaligned(format!(
            "group sizes differ: {} vs {}",
            x.group_size(),
            w.group_size()
        )));
    }
    if x.kind() != ElementKind::Int8 {
        return Err(MantError::KindMismatch {
            expected: "INT8",
            actual: x.kind().name(),
        });
    }
    Ok((m, k, n))
}

/// INT8 (M x K) times 4-bit (K x N) without dequantizing either operand.
/// Group contributions are accumulated in ascending group order.
pub fn gemm(x: &QuantizedTensor, w: &QuantizedTensor) -> Result<Matrix> {
    let (m, k, n) = check_operands(x, w)?;
    if w.kind() != ElementKind::Mant4 {
        return Err(MantError::KindMismatch {
            expected: "MANT4",
            actual: w.kind().name(),
        });
    }
    let g = x.group_size();
    let gpf = k.div_ceil(g);
    // Rows of X and columns of W are fibers, so both payloads are already
    // contiguous along K.
    let xc = x.all_int8_codes()?;
    let wc = w.all_four_bit_codes()?;
    let (xm, wm) = (x.metas(), w.metas());

    let mut out = Matrix::zeros(m, n);
    out.data
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(row, dst)| {
            for (col, cell) in dst.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for grp in 0..gpf {
                    let lo = grp * g;
                    let hi = (lo + g).min(k);
                    let xs = &xc[row * k + lo..row * k + hi];
                    let ws = &wc[col * k + lo..col * k + hi];
                    let dot = fused_group_dot(xs, ws).expect("equal group lengths");
                    let (xmeta, wmeta) = (&xm[row * gpf + grp], &wm[col * gpf + grp]);
                    acc += combine(dot, wmeta.format, xmeta.scale, wmeta.scale);
                }
                *cell = acc;
            }
        });
    Ok(out)
}

/// INT8 (M x K) times INT8 (K x N), scaled per group pair.
pub fn gemm_int8(x: &QuantizedTensor, y: &QuantizedTensor) -> Result<Matrix> {
    let (m, k, n) = check_operands(x, y)?;
    if y.kind() != ElementKind::Int8 {
        return Err(MantError::KindMismatch {
            expected: "INT8",
            actual: y.kind().name(),
        });
    }
    let g = x.group_size();
    let gpf = k.div_ceil(g);
    let xc = x.all_int8_codes()?;
    let yc = y.all_int8_codes()?;
    let (xm, ym) = (x.metas(), y.metas());

    let mut out = Matrix::zeros(m, n);
    out.data
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(row, dst)| {
            for (col, cell) in dst.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for grp in 0..gpf {
                    let lo = grp * g;
                    let hi = (lo + g).min(k);
                    let dot = int8_group_dot(&xc[row * k + lo..row * k + hi], &yc[col * k + lo..col * k + hi])
                        .expect("equal group lengths");
                    acc += f64::from(dot)
                        * f64::from(xm[row * gpf + grp].scale)
                        * f64::from(ym[col * gpf + grp].scale);
                }
                *cell = acc;
            }
        });
    Ok(out)
}

/// Dequantizes both operands and multiplies in `f64`.
pub fn reference_gemm(x: &QuantizedTensor, w: &QuantizedTensor) -> Result<Matrix> {
    let (m, k, n) = check_operands(x, w)?;
    let xd = x.dequantize()?;
    let wd = w.dequantize()?;
    let mut out = Matrix::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            out.data[r * n + c] = (0..k)
                .map(|j| f64::from(xd.data()[r * k + j]) * f64::from(wd.data()[j * n + c]))
                .sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_element_expansion() {
        let dot = fused_group_dot(&[3, -2], &[MantCode::positive(1), MantCode::negative(3)]).unwrap();
        assert_eq!(dot, GroupDot { psum1: 9, psum2: 22 });
        assert_eq!(combine(dot, GroupFormat::Mant(17), 1.0, 1.0), 175.0);
    }

    #[test]
    fn zero_activations() {
        let w = [MantCode::negative(7); 4];
        assert_eq!(fused_group_dot(&[0; 4], &w).unwrap(), GroupDot::default());
    }

    #[test]
    fn length_mismatch() {
        assert!(fused_group_dot(&[1, 2], &[MantCode::ZERO]).is_err());
        assert!(int8_group_dot(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn combine_special_cases() {
        let dot = GroupDot { psum1: -40, psum2: 311 };
        assert_eq!(combine(dot, GroupFormat::Mant(0), 0.5, 2.0), 311.0);
        assert_eq!(combine(dot, GroupFormat::Mant(90), 0.0, 3.0), 0.0);
        assert_eq!(combine(dot, GroupFormat::Int4, 1.0, 1.0), -40.0);
    }

    #[test]
    fn worst_case_group_stays_in_bounds() {
        let x = [127i8; 64];
        let w = [MantCode::positive(7); 64];
        let dot = fused_group_dot(&x, &w).unwrap();
        assert_eq!(dot.psum1, 64 * 127 * 7);
        assert_eq!(dot.psum2, 64 * 127 * 128);
        assert!(dot.psum1 < 1 << 16 && dot.psum2 < 1 << 21);
    }
}
