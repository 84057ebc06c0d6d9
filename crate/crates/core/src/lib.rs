//! MANT: an adaptive 4-bit numeric type whose grid `a * i + 2^i` moves
//! between power-of-two and near-uniform spacing with a single coefficient.
//!
//! The crate covers grid construction and fitting, the group-wise codec and
//! container format, the fused integer GEMM, and the quantization framework
//! for weights and the KV cache.

pub mod codec;
pub mod error;
pub mod framework;
pub mod gemm;
pub mod grid;
pub mod probit;
pub mod synth;

pub use error::{MantError, Result};
pub use grid::{build_grid, fit_coefficient, reference_curve, CurveKind, MantGrid, ReferenceCurve};
