//! Scalar abstraction for the numeric modules.
//!
//! Metrics and the distillation engine are generic over [`Scalar`] so the
//! same code runs at `f32` or `f64`; gradient verification and the
//! acceptance tolerances assume `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every numeric routine in this crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from `usize` counts.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Conversion from `f64` constants (loss weights, tolerances).
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
