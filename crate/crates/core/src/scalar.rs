//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All math is written against [`Scalar`], which `f32` and `f64` implement.
//! Literal constants go through [`Scalar::lit`] so that no routine hard-codes
//! a float width.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Machine epsilon of the scalar type, as an `f64`.
    const EPS: f64;

    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    /// Lossless for `f64`, widening for `f32`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Absolute value. `RealField` reaches `abs` through two traits, so the
    /// bare method call is ambiguous in generic code.
    #[inline]
    fn magnitude(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }

    /// `k` machine epsilons.
    #[inline]
    fn eps_times(k: f64) -> Self {
        Self::lit(Self::EPS * k)
    }
}

impl Scalar for f32 {
    const EPS: f64 = f32::EPSILON as f64;
}

impl Scalar for f64 {
    const EPS: f64 = f64::EPSILON;
}
