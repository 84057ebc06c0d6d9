use crate::error::{MantError, Result};

/// One 4-bit sign-magnitude code. The nibble layout is `s m2 m1 m0`, sign in
/// the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MantCode {
    negative: bool,
    magnitude: u8,
}

impl MantCode {
    pub const ZERO: MantCode = MantCode {
        negative: false,
        magnitude: 0,
    };

    /// # Panics
    /// If `magnitude > 7`.
    pub fn new(negative: bool, magnitude: u8) -> Self {
        assert!(magnitude < 8, "magnitude {magnitude} exceeds 3 bits");
        Self {
            negative,
            magnitude,
        }
    }

    pub fn positive(magnitude: u8) -> Self {
        Self::new(false, magnitude)
    }

    pub fn negative(magnitude: u8) -> Self {
        Self::new(true, magnitude)
    }

    pub fn is_negative(self) -> bool {
        self.negative
    }

    pub fn magnitude(self) -> u8 {
        self.magnitude
    }

    /// +1 or -1.
    pub fn sign(self) -> i32 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    pub fn from_nibble(nibble: u8) -> Self {
        Self {
            negative: nibble & 0x8 != 0,
            magnitude: nibble & 0x7,
        }
    }

    pub fn to_nibble(self) -> u8 {
        (u8::from(self.negative) << 3) | self.magnitude
    }

    /// All sixteen codes, magnitudes ascending, positive before negative.
    pub fn all() -> impl Iterator<Item = MantCode> {
        (0..8u8).flat_map(|m| [MantCode::positive(m), MantCode::negative(m)])
    }
}

/// Packs codes two per byte, low nibble first. An odd trailing code leaves
/// the high nibble zero.
pub fn pack_codes(codes: &[MantCode]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| {
            let lo = pair[0].to_nibble();
            let hi = pair.get(1).map_or(0, |c| c.to_nibble());
            lo | (hi << 4)
        })
        .collect()
}

/// Inverse of [`pack_codes`] for `count` codes.
pub fn unpack_codes(bytes: &[u8], count: usize) -> Result<Vec<MantCode>> {
    let expected = count.div_ceil(2);
    if bytes.len() != expected {
        return Err(MantError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(nibble_at(bytes, i));
    }
    Ok(out)
}

/// Code `index` of a packed nibble stream.
#[inline]
pub(crate) fn nibble_at(bytes: &[u8], index: usize) -> MantCode {
    let byte = bytes[index / 2];
    let nibble = if index.is_multiple_of(2) { byte & 0x0f } else { byte >> 4 };
    MantCode::from_nibble(nibble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_byte_layout() {
        let bytes = pack_codes(&[MantCode::positive(7), MantCode::negative(1)]);
        assert_eq!(bytes, vec![0x97]);
    }

    #[test]
    fn empty_group() {
        assert!(pack_codes(&[]).is_empty());
        assert!(unpack_codes(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn payload_length_is_checked() {
        assert!(matches!(
            unpack_codes(&[0, 0], 5),
            Err(MantError::LengthMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn sixteen_distinct_codes() {
        let nibbles: std::collections::BTreeSet<u8> =
            MantCode::all().map(MantCode::to_nibble).collect();
        assert_eq!(nibbles.len(), 16);
    }

    proptest! {
        #[test]
        fn pack_round_trip(nibbles in proptest::collection::vec(0u8..16, 0..130)) {
            let codes: Vec<MantCode> = nibbles.iter().map(|&n| MantCode::from_nibble(n)).collect();
            let packed = pack_codes(&codes);
            prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
            prop_assert_eq!(unpack_codes(&packed, codes.len()).unwrap(), codes);
        }
    }
}
