//! Floating-point abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar usable by the signal, typicality, identification and metric
/// routines. Implemented for `f32` and `f64`.
pub trait Scalar:
    RealField
    + Copy
    + Default
    + Debug
    + Display
    + FromPrimitive
    + ToPrimitive
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("real value")
    }

    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }

    /// Relative cutoff below which singular values are treated as zero.
    fn rank_tolerance() -> Self {
        let eps = Self::default_epsilon() * Self::lit(64.0);
        RealField::max(eps, Self::lit(1e-12))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm of a slice.
pub fn norm2<T: Scalar>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

pub fn mean<T: Scalar>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    x.iter().fold(T::zero(), |acc, &v| acc + v) / T::count(x.len())
}
