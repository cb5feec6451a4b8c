//! Floating-point scalar abstraction shared by every numerical routine.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use std::iter::Sum;

/// Real floating-point scalar: `f32` or `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Default + Sum {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Relative tolerance used when checking that a matrix is symmetric.
    ///
    /// 1e-10 in 64-bit arithmetic, widened to a small multiple of machine
    /// epsilon for lower precision types.
    #[inline]
    fn symmetry_tol() -> Self {
        Self::lit(1e-10).max(Self::epsilon() * Self::lit(1e3))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
