//! Scalar abstraction shared by the numeric modules.
//!
//! Power derivation, binning, smoothing and correlation are written once over
//! [`Scalar`] and instantiated for `f32` and `f64` (see the aliases at the crate
//! root). Timestamps and counters stay integral everywhere.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable by the analysis pipeline.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + FromStr + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    /// Lossy conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + FromStr + Send + Sync + 'static
{
}

/// Microseconds per second.
pub const MICROS_PER_SEC: i64 = 1_000_000;

/// Microseconds per hour.
pub const MICROS_PER_HOUR: i64 = 3_600 * MICROS_PER_SEC;
