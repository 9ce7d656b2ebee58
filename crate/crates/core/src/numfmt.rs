//! Two's-complement fixed-point codes and symmetric per-tensor quantization.

use serde::{Deserialize, Serialize};

use crate::error::{FaqError, Result};
use crate::scalar::Scalar;

/// Integer code of a quantized value. Wide enough for every supported bitwidth.
pub type Code = i16;

pub const MIN_BITWIDTH: u32 = 2;
pub const MAX_BITWIDTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Round to nearest, ties to even.
    #[default]
    NearestEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bitwidth: u32,
    pub rounding: Rounding,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            bitwidth: 8,
            rounding: Rounding::NearestEven,
        }
    }
}

impl QuantSpec {
    pub fn new(bitwidth: u32) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        Ok(QuantSpec {
            bitwidth,
            rounding: Rounding::NearestEven,
        })
    }

    pub fn min_code(&self) -> i32 {
        min_code(self.bitwidth)
    }

    pub fn max_code(&self) -> i32 {
        max_code(self.bitwidth)
    }
}

pub fn check_bitwidth(bitwidth: u32) -> Result<()> {
    if !(MIN_BITWIDTH..=MAX_BITWIDTH).contains(&bitwidth) {
        return Err(FaqError::Config(format!(
            "bitwidth {bitwidth} outside {MIN_BITWIDTH}..={MAX_BITWIDTH}"
        )));
    }
    Ok(())
}

#[inline]
pub fn min_code(bitwidth: u32) -> i32 {
    -(1 << (bitwidth - 1))
}

#[inline]
pub fn max_code(bitwidth: u32) -> i32 {
    (1 << (bitwidth - 1)) - 1
}

/// Scale factor of one quantized tensor (real units per integer step).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFactor<T> {
    pub scale: T,
    pub tensor_id: String,
}

impl<T: Scalar> ScaleFactor<T> {
    pub fn new(scale: T, tensor_id: impl Into<String>) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(FaqError::Validation(format!(
                "scale must be finite and positive, got {scale}"
            )));
        }
        Ok(ScaleFactor {
            scale,
            tensor_id: tensor_id.into(),
        })
    }
}

/// Two's-complement bit pattern of `value`; bit 0 is the least significant.
pub fn encode_twos_complement(value: i32, bitwidth: u32) -> Result<u32> {
    check_bitwidth(bitwidth)?;
    if value < min_code(bitwidth) || value > max_code(bitwidth) {
        return Err(FaqError::Range {
            value: value as i64,
            bitwidth,
        });
    }
    Ok((value as u32) & width_mask(bitwidth))
}

/// Inverse of [`encode_twos_complement`]. Bits above `bitwidth` are ignored.
pub fn decode_twos_complement(bits: u32, bitwidth: u32) -> i32 {
    let bits = bits & width_mask(bitwidth);
    let sign = 1u32 << (bitwidth - 1);
    if bits & sign != 0 {
        bits as i32 - (1i32 << bitwidth)
    } else {
        bits as i32
    }
}

#[inline]
pub(crate) fn width_mask(bitwidth: u32) -> u32 {
    if bitwidth >= 32 {
        u32::MAX
    } else {
        (1u32 << bitwidth) - 1
    }
}

/// Max-abs symmetric scale: `max|x| / (2^(b-1) - 1)`, or 1 for an all-zero tensor.
pub fn compute_scale<T: Scalar>(
    tensor: &[T],
    spec: &QuantSpec,
    tensor_id: impl Into<String>,
) -> Result<ScaleFactor<T>> {
    if tensor.is_empty() {
        return Err(FaqError::Shape("cannot compute scale of empty tensor".into()));
    }
    let mut max_abs = T::zero();
    for &x in tensor {
        if !x.is_finite() {
            return Err(FaqError::Validation(format!("non-finite tensor element {x}")));
        }
        max_abs = max_abs.max(x.abs());
    }
    let scale = if max_abs == T::zero() {
        T::one()
    } else {
        max_abs / T::of(spec.max_code() as f64)
    };
    ScaleFactor::new(scale, tensor_id)
}

#[inline]
pub fn quantize_value<T: Scalar>(x: T, scale: T, spec: &QuantSpec) -> Code {
    let lo = T::of(spec.min_code() as f64);
    let hi = T::of(spec.max_code() as f64);
    let q = (x / scale).round_half_even();
    let q = if q.is_nan() { T::zero() } else { q.max(lo).min(hi) };
    q.to_i32().unwrap_or(0) as Code
}

/// `clamp(round_half_even(x / scale))` elementwise.
pub fn quantize<T: Scalar>(tensor: &[T], scale: &ScaleFactor<T>, spec: &QuantSpec) -> Vec<Code> {
    tensor
        .iter()
        .map(|&x| quantize_value(x, scale.scale, spec))
        .collect()
}

pub fn dequantize<T: Scalar>(codes: &[Code], scale: &ScaleFactor<T>) -> Vec<T> {
    codes
        .iter()
        .map(|&c| T::of(c as f64) * scale.scale)
        .collect()
}
