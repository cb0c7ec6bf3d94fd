//! Scalar abstraction for the numeric core.
//!
//! All scores, probabilities, and test statistics are generic over [`Scalar`]
//! so the pipeline runs in `f32` or `f64`; the crate-root alias
//! [`crate::Prob`] pins the default.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

/// Exact-count conversion; counts in this crate stay far below 2^52.
pub fn from_count<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("count fits the scalar type")
}

pub fn from_f64<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite f64 fits the scalar type")
}

/// `num / den` as a scalar, `0` when the denominator is zero.
pub fn ratio<S: Scalar>(num: usize, den: usize) -> S {
    if den == 0 {
        S::zero()
    } else {
        from_count::<S>(num) / from_count::<S>(den)
    }
}
