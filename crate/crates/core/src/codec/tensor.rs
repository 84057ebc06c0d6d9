//! Dense tensors and their group-wise quantized counterparts.

use rayon::prelude::*;

use super::code::{nibble_at, pack_codes, MantCode};
use super::group::{
    dequantize_4bit, dequantize_int8, quantize_4bit_group, quantize_activation_group, GroupFormat,
    GroupMeta,
};
use crate::error::{MantError, Result};

/// Row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.is_empty() || n != data.len() {
            return Err(MantError::ShapeMismatch(format!(
                "dims {dims:?} imply {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Mant4,
    Int8,
}

impl ElementKind {
    pub fn to_byte(self) -> u8 {
        match self {
            Self::Mant4 => 0,
            Self::Int8 => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Mant4),
            1 => Ok(Self::Int8),
            other => Err(MantError::Format(format!("unknown element kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mant4 => "MANT4",
            Self::Int8 => "INT8",
        }
    }

    /// Payload bytes needed for `count` elements.
    pub fn payload_len(self, count: usize) -> usize {
        match self {
            Self::Mant4 => count.div_ceil(2),
            Self::Int8 => count,
        }
    }
}

/// How groups tile a tensor.
///
/// A *fiber* is the 1-D line along `axis` obtained by fixing every other
/// index; fibers are enumerated in row-major order of the remaining axes.
/// Each fiber splits into `ceil(len / group_size)` groups, the last one
/// possibly short. Group `f * groups_per_fiber + g` covers positions
/// `[g * G, min(len, (g + 1) * G))` of fiber `f`, and the payload stores
/// groups back to back in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub axis_len: usize,
    pub outer: usize,
    pub inner: usize,
    pub group_size: usize,
}

impl GroupLayout {
    pub fn new(dims: &[usize], axis: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || group_size > u16::MAX as usize {
            return Err(MantError::InvalidGroupSize(group_size));
        }
        if axis >= dims.len() {
            return Err(MantError::ShapeMismatch(format!(
                "group axis {axis} out of range for {} dims",
                dims.len()
            )));
        }
        Ok(Self {
            axis_len: dims[axis],
            outer: dims[..axis].iter().product(),
            inner: dims[axis + 1..].iter().product(),
            group_size,
        })
    }

    pub fn fibers(&self) -> usize {
        self.outer * self.inner
    }

    pub fn groups_per_fiber(&self) -> usize {
        self.axis_len.div_ceil(self.group_size)
    }

    pub fn group_count(&self) -> usize {
        self.fibers() * self.groups_per_fiber()
    }

    /// Row-major element index of position `pos` along fiber `fiber`.
    #[inline]
    pub fn element_index(&self, fiber: usize, pos: usize) -> usize {
        let (o, i) = (fiber / self.inner, fiber % self.inner);
        (o * self.axis_len + pos) * self.inner + i
    }

    /// Axis range of group `g` within a fiber.
    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        let start = g * self.group_size;
        start..(start + self.group_size).min(self.axis_len)
    }

    /// Offset of group `index` in the group-ordered element stream.
    pub fn group_offset(&self, index: usize) -> usize {
        let gpf = self.groups_per_fiber();
        let (f, g) = (index / gpf, index % gpf);
        f * self.axis_len + g * self.group_size
    }

    /// Gathers the values of group `index` from a row-major buffer.
    pub fn gather(&self, data: &[f32], index: usize) -> Vec<f32> {
        let gpf = self.groups_per_fiber();
        let (f, g) = (index / gpf, index % gpf);
        self.group_range(g)
            .map(|p| data[self.element_index(f, p)])
            .collect()
    }
}

/// Group-wise quantized tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    dims: Vec<usize>,
    kind: ElementKind,
    group_size: usize,
    group_axis: usize,
    metas: Vec<GroupMeta>,
    /// Group-ordered codes: packed nibbles (low first) for MANT4, one byte
    /// per code for INT8.
    payload: Vec<u8>,
}

impl QuantizedTensor {
    /// Assembles a tensor from its parts, checking every structural
    /// invariant.
    pub fn from_parts(
        dims: Vec<usize>,
        kind: ElementKind,
        group_size: usize,
        group_axis: usize,
        metas: Vec<GroupMeta>,
        payload: Vec<u8>,
    ) -> Result<Self> {
        let layout = GroupLayout::new(&dims, group_axis, group_size)?;
        if metas.len() != layout.group_count() {
            return Err(MantError::Format(format!(
                "expected {} group metas, got {}",
                layout.group_count(),
                metas.len()
            )));
        }
        let gpf = layout.groups_per_fiber();
        for (i, m) in metas.iter().enumerate() {
            let want = layout.group_range(i % gpf).len();
            if m.len != want {
                return Err(MantError::Format(format!(
                    "group {i} has length {}, layout requires {want}",
                    m.len
                )));
            }
            let ok = match kind {
                ElementKind::Mant4 => m.format.is_four_bit(),
                ElementKind::Int8 => m.format == GroupFormat::Int8,
            };
            if !ok {
                return Err(MantError::KindMismatch {
                    expected: kind.name(),
                    actual: m.format.name(),
                });
            }
            if !(m.scale >= 0.0 && m.scale.is_finite()) {
                return Err(MantError::Format(format!("group {i} has invalid scale {}", m.scale)));
            }
        }
        let count: usize = dims.iter().product();
        let expected = kind.payload_len(count);
        if payload.len() != expected {
            return Err(MantError::LengthMismatch {
                expected,
                actual: payload.len(),
            });
        }
        Ok(Self {
            dims,
            kind,
            group_size,
            group_axis,
            metas,
            payload,
        })
    }

    /// Builds a 4-bit tensor from already-encoded groups in layout order.
    pub fn from_four_bit_groups(
        dims: Vec<usize>,
        group_size: usize,
        group_axis: usize,
        groups: Vec<(Vec<MantCode>, GroupMeta)>,
    ) -> Result<Self> {
        let mut codes = Vec::new();
        let mut metas = Vec::with_capacity(groups.len());
        for (c, m) in groups {
            codes.extend(c);
            metas.push(m);
        }
        Self::from_parts(
            dims,
            ElementKind::Mant4,
            group_size,
            group_axis,
            metas,
            pack_codes(&codes),
        )
    }

    /// Builds an INT8 tensor from already-encoded groups in layout order.
    pub fn from_int8_groups(
        dims: Vec<usize>,
        group_size: usize,
        group_axis: usize,
        groups: Vec<(Vec<i8>, GroupMeta)>,
    ) -> Result<Self> {
        let mut payload = Vec::new();
        let mut metas = Vec::with_capacity(groups.len());
        for (c, m) in groups {
            payload.extend(c.iter().map(|&x| x as u8));
            metas.push(m);
        }
        Self::from_parts(dims, ElementKind::Int8, group_size, group_axis, metas, payload)
    }

    /// Encodes `tensor` in 4-bit groups along `axis`; `choose` picks the
    /// format of each group from its index and values.
    pub fn quantize_four_bit<F>(
        tensor: &Tensor,
        axis: usize,
        group_size: usize,
        choose: F,
    ) -> Result<Self>
    where
        F: Fn(usize, &[f32]) -> Result<GroupFormat> + Sync,
    {
        let layout = GroupLayout::new(tensor.dims(), axis, group_size)?;
        let groups = (0..layout.group_count())
            .into_par_iter()
            .map(|i| {
                let values = layout.gather(tensor.data(), i);
                let format = choose(i, &values)?;
                quantize_4bit_group(&values, format)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_four_bit_groups(tensor.dims().to_vec(), group_size, axis, groups)
    }

    /// Group-wise INT8 along `axis`.
    pub fn quantize_int8(tensor: &Tensor, axis: usize, group_size: usize) -> Result<Self> {
        let layout = GroupLayout::new(tensor.dims(), axis, group_size)?;
        let groups = (0..layout.group_count())
            .into_par_iter()
            .map(|i| quantize_activation_group(&layout.gather(tensor.data(), i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_int8_groups(tensor.dims().to_vec(), group_size, axis, groups)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn group_axis(&self) -> usize {
        self.group_axis
    }

    pub fn metas(&self) -> &[GroupMeta] {
        &self.metas
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout::new(&self.dims, self.group_axis, self.group_size)
            .expect("validated on construction")
    }

    /// Codes of a 4-bit group.
    pub fn four_bit_codes(&self, index: usize) -> Result<Vec<MantCode>> {
        if self.kind != ElementKind::Mant4 {
            return Err(MantError::KindMismatch {
                expected: "MANT4",
                actual: self.kind.name(),
            });
        }
        let start = self.layout().group_offset(index);
        Ok((start..start + self.metas[index].len)
            .map(|i| nibble_at(&self.payload, i))
            .collect())
    }

    /// All 4-bit codes in group order.
    pub fn all_four_bit_codes(&self) -> Result<Vec<MantCode>> {
        if self.kind != ElementKind::Mant4 {
            return Err(MantError::KindMismatch {
                expected: "MANT4",
                actual: self.kind.name(),
            });
        }
        let n: usize = self.dims.iter().product();
        Ok((0..n).map(|i| nibble_at(&self.payload, i)).collect())
    }

    /// Codes of an INT8 group.
    pub fn int8_codes(&self, index: usize) -> Result<&[i8]> {
        if self.kind != ElementKind::Int8 {
            return Err(MantError::KindMismatch {
                expected: "INT8",
                actual: self.kind.name(),
            });
        }
        let start = self.layout().group_offset(index);
        Ok(as_i8(&self.payload[start..start + self.metas[index].len]))
    }

    /// All INT8 codes in group order.
    pub fn all_int8_codes(&self) -> Result<&[i8]> {
        if self.kind != ElementKind::Int8 {
            return Err(MantError::KindMismatch {
                expected: "INT8",
                actual: self.kind.name(),
            });
        }
        Ok(as_i8(&self.payload))
    }

    /// Reconstructs the real-valued tensor.
    pub fn dequantize(&self) -> Result<Tensor> {
        let layout = self.layout();
        let mut out = Tensor::zeros(self.dims.clone());
        let gpf = layout.groups_per_fiber();
        for (i, meta) in self.metas.iter().enumerate() {
            let values = match self.kind {
                ElementKind::Mant4 => dequantize_4bit(&self.four_bit_codes(i)?, meta)?,
                ElementKind::Int8 => dequantize_int8(self.int8_codes(i)?, meta)?,
            };
            let (f, g) = (i / gpf, i % gpf);
            for (p, v) in layout.group_range(g).zip(values) {
                out.data_mut()[layout.element_index(f, p)] = v;
            }
        }
        Ok(out)
    }
}

fn as_i8(bytes: &[u8]) -> &[i8] {
    // SAFETY: u8 and i8 share size and alignment.
    unsafe { std::slice::from_raw_parts(bytes.as_ptr().cast::<i8>(), bytes.len()) }
}
