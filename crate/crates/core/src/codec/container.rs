//! On-disk formats. All integers are little-endian.
//!
//! Quantized container (`MNTQ`):
//!
//! ```text
//! magic        4 bytes  "MNTQ"
//! version      u16      1
//! element_kind u8       0 = MANT4, 1 = INT8
//! group_size   u16
//! ndim         u8
//! dims         u64 * ndim
//! group_axis   u8
//! metas        per group: scale (IEEE half), format byte (u8), group_len (u16)
//! payload      group-ordered codes; MANT4 packs two per byte, low nibble first
//! ```
//!
//! The format byte is the MANT coefficient `a` (0..=127), `0x80` for an
//! INT4 group, or `0xff` for an INT8 group.
//!
//! Raw tensor (`MNTT`): magic "MNTT", version u16, dtype u8 (0 = f32),
//! ndim u8, dims u64 * ndim, then the row-major f32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use half::f16;

use super::group::{GroupFormat, GroupMeta};
use super::tensor::{ElementKind, QuantizedTensor, Tensor};
use crate::error::{MantError, Result};

pub const QUANTIZED_MAGIC: &[u8; 4] = b"MNTQ";
pub const TENSOR_MAGIC: &[u8; 4] = b"MNTT";
pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(MantError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(MantError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_dims<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let ndim = r.read_u8()?;
    if ndim == 0 {
        return Err(MantError::Format("zero-dimensional tensor".into()));
    }
    (0..ndim)
        .map(|_| {
            let d = r.read_u64::<LittleEndian>()?;
            usize::try_from(d).map_err(|_| MantError::Format(format!("dimension {d} too large")))
        })
        .collect()
}

fn write_dims<W: Write>(w: &mut W, dims: &[usize]) -> Result<()> {
    let ndim = u8::try_from(dims.len())
        .map_err(|_| MantError::Format(format!("{} dims exceed u8", dims.len())))?;
    w.write_u8(ndim)?;
    for &d in dims {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    Ok(())
}

fn ensure_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(MantError::Format("trailing bytes after payload".into())),
    }
}

pub fn write_quantized<W: Write>(w: &mut W, q: &QuantizedTensor) -> Result<()> {
    w.write_all(QUANTIZED_MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(q.kind().to_byte())?;
    w.write_u16::<LittleEndian>(q.group_size() as u16)?;
    write_dims(w, q.dims())?;
    w.write_u8(q.group_axis() as u8)?;
    for m in q.metas() {
        let h = f16::from_f32(m.scale);
        if h.to_f32() != m.scale {
            return Err(MantError::Format(format!(
                "scale {} is not representable in half precision",
                m.scale
            )));
        }
        w.write_u16::<LittleEndian>(h.to_bits())?;
        w.write_u8(m.format.to_byte())?;
        w.write_u16::<LittleEndian>(m.len as u16)?;
    }
    w.write_all(q.payload())?;
    Ok(())
}

pub fn read_quantized<R: Read>(r: &mut R) -> Result<QuantizedTensor> {
    check_magic(r, QUANTIZED_MAGIC)?;
    let kind = ElementKind::from_byte(r.read_u8()?)?;
    let group_size = usize::from(r.read_u16::<LittleEndian>()?);
    let dims = read_dims(r)?;
    let group_axis = usize::from(r.read_u8()?);
    let layout = super::tensor::GroupLayout::new(&dims, group_axis, group_size)?;
    let mut metas = Vec::with_capacity(layout.group_count());
    for _ in 0..layout.group_count() {
        let scale = f16::from_bits(r.read_u16::<LittleEndian>()?).to_f32();
        let format = GroupFormat::from_byte(r.read_u8()?)?;
        let len = usize::from(r.read_u16::<LittleEndian>()?);
        metas.push(GroupMeta { scale, format, len });
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; kind.payload_len(count)];
    r.read_exact(&mut payload)
        .map_err(|e| MantError::Format(format!("truncated payload: {e}")))?;
    ensure_eof(r)?;
    QuantizedTensor::from_parts(dims, kind, group_size, group_axis, metas, payload)
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(DTYPE_F32)?;
    write_dims(w, t.dims())?;
    for &v in t.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    check_magic(r, TENSOR_MAGIC)?;
    let dtype = r.read_u8()?;
    if dtype != DTYPE_F32 {
        return Err(MantError::Format(format!("unsupported dtype {dtype}")));
    }
    let dims = read_dims(r)?;
    let count: usize = dims.iter().product();
    let mut data = vec![0f32; count];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| MantError::Format(format!("truncated payload: {e}")))?;
    ensure_eof(r)?;
    Tensor::new(dims, data)
}

pub fn save_quantized(path: impl AsRef<Path>, q: &QuantizedTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_quantized(&mut w, q)?;
    w.flush()?;
    Ok(())
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    read_quantized(&mut BufReader::new(File::open(path)?))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QuantizedTensor {
        let t = Tensor::new(vec![2, 3], vec![1.0, -0.5, 0.25, 0.0, 2.0, -4.0]).unwrap();
        QuantizedTensor::quantize_four_bit(&t, 1, 2, |_, _| Ok(GroupFormat::Mant(0))).unwrap()
    }

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_quantized(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"MNTQ");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 0);
        assert_eq!(&buf[7..9], &[2, 0]);
        assert_eq!(buf[9], 2);
        assert_eq!(&buf[10..18], &2u64.to_le_bytes());
        assert_eq!(&buf[18..26], &3u64.to_le_bytes());
        assert_eq!(buf[26], 1);
        // four groups of five metadata bytes, then ceil(6 / 2) payload bytes
        assert_eq!(buf.len(), 27 + 4 * 5 + 3);
        // group 0: [1.0, -0.5] -> scale 1/128 = half 0x2000, a = 0, len 2
        assert_eq!(&buf[27..32], &[0x00, 0x20, 0, 2, 0]);
    }

    #[test]
    fn quantized_round_trip() {
        let q = sample();
        let mut buf = Vec::new();
        write_quantized(&mut buf, &q).unwrap();
        assert_eq!(read_quantized(&mut buf.as_slice()).unwrap(), q);
    }

    #[test]
    fn tensor_round_trip_and_truncation() {
        let t = Tensor::new(vec![3], vec![1.5, -2.0, 3.25]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 1 + 1 + 8 + 12);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_tensor(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        assert!(matches!(read_quantized(&mut buf.as_slice()), Err(MantError::Format(_))));
    }
}
