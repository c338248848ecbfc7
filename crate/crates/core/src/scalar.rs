//! Scalar abstraction for message and factor arithmetic.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for factors and messages: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + FromStr + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and generator output.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    /// Widening conversion used for priorities and reports.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real always converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
