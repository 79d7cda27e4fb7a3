//! Scalar abstraction for the numerical kernel.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the copula and special-function kernel is generic
/// over. Implemented for `f32` and `f64`; the model/sampler pipeline uses
/// `f64` throughout.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Conversion from an unsigned count.
    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("representable count")
    }
}

impl Real for f32 {}
impl Real for f64 {}
