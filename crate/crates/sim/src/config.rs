//! Array geometry and energy coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Weight-stationary systolic array with re-quantization units (RQUs).
///
/// The physical array is `peg_rows x peg_cols` processing-element groups,
/// each performing one 8x8-bit or several narrower multiplies per cycle, so
/// the logical array has `peg_rows * 8 / weight_bits` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub name: String,
    pub peg_rows: u64,
    pub peg_cols: u64,
    /// Bit width of the stationary operand (weights, or K/V in attention).
    pub weight_bits: u32,
    /// Bit width of KV-cache entries in attention layers.
    pub kv_bits: u32,
    pub activation_bits: u32,
    pub group_size: u64,
    pub frequency_hz: f64,
    pub dram_bandwidth: f64,
    pub weight_buffer_bytes: u64,
    pub activation_buffer_bytes: u64,
    /// Latency of the non-pipelined divider used to derive output scales.
    pub divider_latency: u64,
    pub rqu_count: u64,
    /// Depth of the RQU comparator pipeline.
    pub rqu_latency: u64,
    /// Cycles to drain the accumulators after the last tile.
    pub drain_latency: u64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            name: "mant-w4".into(),
            peg_rows: 32,
            peg_cols: 32,
            weight_bits: 4,
            kv_bits: 4,
            activation_bits: 8,
            group_size: 64,
            frequency_hz: 1.0e9,
            dram_bandwidth: 8.0,
            weight_buffer_bytes: 1 << 20,
            activation_buffer_bytes: 1 << 20,
            divider_latency: 12,
            rqu_count: 32,
            rqu_latency: 32,
            drain_latency: 4,
        }
    }
}

fn check_bits(what: &str, bits: u32) -> Result<()> {
    if matches!(bits, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(SimError::Config(format!("{what} must be 2, 4 or 8, got {bits}")))
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        check_bits("weight_bits", self.weight_bits)?;
        check_bits("kv_bits", self.kv_bits)?;
        if self.activation_bits != 8 {
            return Err(SimError::Config("activation_bits must be 8".into()));
        }
        if self.peg_rows == 0 || self.peg_cols == 0 || self.rqu_count == 0 {
            return Err(SimError::Config("array dimensions must be positive".into()));
        }
        if self.group_size == 0 {
            return Err(SimError::Config("group_size must be positive".into()));
        }
        if !(self.dram_bandwidth > 0.0 && self.dram_bandwidth.is_finite()) {
            return Err(SimError::Config("dram_bandwidth must be positive".into()));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(SimError::Config("frequency_hz must be positive".into()));
        }
        if self.weight_buffer_bytes == 0 || self.activation_buffer_bytes == 0 {
            return Err(SimError::Config("buffer sizes must be positive".into()));
        }
        for bits in [self.weight_bits, self.kv_bits] {
            let r = self.logical_rows(bits);
            if !self.group_size.is_multiple_of(r) && !r.is_multiple_of(self.group_size) {
                return Err(SimError::Config(format!(
                    "group size {} and logical rows {r} must divide one another",
                    self.group_size
                )));
            }
        }
        Ok(())
    }

    /// `peg_rows * 8 / bits`: 32, 64 or 128 rows for 8-, 4- and 2-bit
    /// stationary operands.
    pub fn logical_rows(&self, bits: u32) -> u64 {
        self.peg_rows * 8 / u64::from(bits)
    }

    /// Output-tile rounds the RQUs need to cover one quantization group.
    pub fn rqu_rounds(&self) -> u64 {
        self.group_size.div_ceil(self.rqu_count).max(1)
    }

    /// Metadata bytes per group: f16 scale plus the coefficient byte for
    /// sub-8-bit MANT groups, scale only for INT8 groups.
    pub fn metadata_bytes(bits: u32) -> u64 {
        if bits == 8 {
            2
        } else {
            3
        }
    }
}

/// Energy per event in relative units (one 8x8 MAC = 1.0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub mac8: f64,
    pub mac4: f64,
    pub mac2: f64,
    /// Shift-accumulate into the second partial sum, per MAC.
    pub shift_accumulate: f64,
    /// Extra accumulation lane carrying the second partial sum, per MAC.
    pub psum2_lane: f64,
    pub sram_per_byte: f64,
    pub dram_per_byte: f64,
    pub static_per_cycle: f64,
    /// Max search, scale division and rounding, per quantized output.
    pub rqu_per_element: f64,
    /// Running max/sum/sum-of-squares update per V element in temporal mode.
    pub rqu_accumulate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mac8: 1.0,
            mac4: 0.5,
            mac2: 0.25,
            shift_accumulate: 0.1,
            psum2_lane: 0.05,
            sram_per_byte: 2.0,
            dram_per_byte: 50.0,
            static_per_cycle: 20.0,
            rqu_per_element: 0.5,
            rqu_accumulate: 0.2,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mac8,
            self.mac4,
            self.mac2,
            self.shift_accumulate,
            self.psum2_lane,
            self.sram_per_byte,
            self.dram_per_byte,
            self.static_per_cycle,
            self.rqu_per_element,
            self.rqu_accumulate,
        ];
        if all.iter().all(|c| *c >= 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(SimError::Config("energy coefficients must be finite and non-negative".into()))
        }
    }

    pub fn mac(&self, bits: u32) -> f64 {
        match bits {
            2 => self.mac2,
            4 => self.mac4,
            _ => self.mac8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_rows_by_width() {
        let c = ArrayConfig::default();
        assert_eq!(c.logical_rows(8), 32);
        assert_eq!(c.logical_rows(4), 64);
        assert_eq!(c.logical_rows(2), 128);
        assert_eq!(c.rqu_rounds(), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ArrayConfig {
                weight_bits: 3,
                ..Default::default()
            },
            ArrayConfig {
                group_size: 48,
                ..Default::default()
            },
            ArrayConfig {
                dram_bandwidth: 0.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(ArrayConfig::default().validate().is_ok());
        let neg = CostModel {
            dram_per_byte: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ArrayConfig = serde_json::from_str(r#"{"name": "w8", "weight_bits": 8}"#).unwrap();
        assert_eq!(c.weight_bits, 8);
        assert_eq!(c.peg_rows, 32);
        assert!(serde_json::from_str::<ArrayConfig>(r#"{"wieght_bits": 8}"#).is_err());
    }
}
