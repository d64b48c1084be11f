//! Scalar abstraction for the numeric pipeline.
//!
//! All delay, rate, and model math is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`. The CLI and the file formats pin `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point scalar usable throughout the pipeline.
pub trait Scalar:
    Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy cast from `f64`, used when crossing from sampled/stored values
    /// (always doubles) into the working scalar type.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("f64 -> scalar cast")
    }

    /// Cast from an integer count (packet counts, node counts).
    fn from_count(v: usize) -> Self {
        Self::from(v).expect("count -> scalar cast")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar -> f64 cast")
    }
}

impl<T> Scalar for T where T: Float + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static {}
