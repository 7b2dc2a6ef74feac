//! Scalar abstraction shared by every numeric report in the crate.
//!
//! Statistics, metrics, similarities and deltas are generic over [`Scalar`]
//! so callers can pick `f32` (compact embeddings) or `f64` (reports). The
//! crate root exposes `f64` aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts a count. Counts in this crate are far below 2^24, so the
    /// conversion is exact for both `f32` and `f64`.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::nan)
    }

    fn hundred() -> Self {
        Self::from_count(100)
    }

    /// `num / den`, or zero when `den` is zero.
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::from_count(num) / Self::from_count(den)
        }
    }

    /// Arithmetic mean; zero for an empty input.
    fn mean<I: IntoIterator<Item = Self>>(values: I) -> Self {
        let mut n = 0usize;
        let mut total = Self::zero();
        for v in values {
            total = total + v;
            n += 1;
        }
        if n == 0 {
            Self::zero()
        } else {
            total / Self::from_count(n)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
