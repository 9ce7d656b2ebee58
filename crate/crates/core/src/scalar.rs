use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for weights, activations and scale factors.
///
/// Implemented for `f32` and `f64`. Everything that touches integer codes
/// (fault patterns, lookup tables, masks) is independent of this type.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for literals and file payloads.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round to nearest integer, ties to even.
    fn round_half_even(self) -> Self {
        let r = self.round();
        let two = Self::one() + Self::one();
        if (self - self.trunc()).abs() == Self::of(0.5) {
            (self / two).round() * two
        } else {
            r
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_even() {
        assert_eq!(63.5f64.round_half_even(), 64.0);
        assert_eq!(62.5f64.round_half_even(), 62.0);
        assert_eq!((-62.5f64).round_half_even(), -62.0);
        assert_eq!((-63.5f32).round_half_even(), -64.0);
        assert_eq!(2.4f64.round_half_even(), 2.0);
        assert_eq!((-2.6f64).round_half_even(), -3.0);
        for k in -100..100 {
            let x = k as f64 + 0.5;
            assert_eq!(x.round_half_even(), x.round_ties_even());
        }
    }
}
