//! Scalar abstraction used by every numeric module.
//!
//! All core math is written against [`Real`] so the same code instantiates at
//! `f32` or `f64`. The solver and planner defaults are tuned for `f64`; `f32`
//! works but the documented tolerances assume double precision.

use core::fmt;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive};

/// Floating-point scalar with the conversions and operator forms the planner
/// stack needs. Blanket-implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Default
        + fmt::Debug
        + fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Shorthand for lifting an `f64` literal into the generic scalar.
#[inline]
pub(crate) fn c<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("scalar literal out of range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifts_literals_into_both_widths() {
        let a: f32 = c(0.25);
        let b: f64 = c(0.25);
        assert_eq!(a, 0.25_f32);
        assert_eq!(b, 0.25_f64);
    }
}
