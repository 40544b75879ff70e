//! Scalar element abstraction so the same graph code runs in f32 for
//! training and in f64 for finite-difference gradient checks.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub trait Element:
    LinalgScalar
    + Float
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_float(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_float(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_float(self) -> f64 {
        self
    }
}
