//! Scalar abstraction: the sampling pipeline is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole pipeline is generic over.
///
/// `f64` is the full-precision default used by the verification suites;
/// `f32` is the reduced-precision mode. Uniform variates are always derived
/// from integer counters (see [`crate::rng`]), so the scalar type only
/// affects logits, perturbed scores, and accumulators.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + AddAssign + Debug + Display + Send + Sync + 'static
{
}

/// Narrow an `f64` into the working scalar type.
#[inline]
pub fn from_f64<T: Scalar>(x: f64) -> T {
    T::from(x).expect("f64 -> scalar conversion")
}

/// Widen a working scalar to `f64` (exact for both `f32` and `f64`).
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar -> f64 conversion")
}
