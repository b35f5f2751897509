//! Scalar abstraction for the numeric code.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point type usable by the metric and similarity code.
pub trait Scalar: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {
    /// Lossy conversion from a count or ratio.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to a float type")
    }
}

impl<T: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static> Scalar for T {}
