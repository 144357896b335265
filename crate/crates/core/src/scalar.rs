use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numerics are generic over: `f32` or `f64`.
///
/// Everything that leaves the process (files, checkpoints, reports) goes
/// through `f64`, so the on-disk formats do not depend on the scalar type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable as scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Clamp applied inside log and division.
    #[inline]
    fn eps() -> Self {
        Self::lit(1e-12)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
