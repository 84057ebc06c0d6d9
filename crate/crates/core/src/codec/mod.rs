//! Group-wise encoding: 4-bit MANT (or INT4) for weights and KV cache,
//! symmetric INT8 for activations, plus the packed storage formats.

mod code;
pub mod container;
mod group;
mod tensor;

pub use code::{pack_codes, unpack_codes, MantCode};
pub use group::{
    code_level, dequantize_4bit, dequantize_group, dequantize_int8, dequantize_symmetric,
    encode_value, quantize_4bit_group, quantize_activation_group, quantize_int8_with_scale,
    quantize_symmetric, quantize_weight_group, round_scale, CodesRef, GroupFormat, GroupMeta,
};
pub use tensor::{ElementKind, GroupLayout, QuantizedTensor, Tensor};
