//! Floating-point element type shared by every kernel.
//!
//! Training runs in `f32`; gradient verification runs in `f64`. Every
//! numeric routine in the crate is written once against [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of a [`Tensor`](crate::Tensor).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Bit width tag written into checkpoints and logs.
    const BITS: u32;

    /// Lossless for `f32`, the usual narrowing for `f64`.
    fn as_f32(self) -> f32;

    fn of_f32(v: f32) -> Self;

    /// Converts an `f64` literal, used for constants such as `1e-5`.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn as_f32(self) -> f32 {
        self
    }

    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }

    #[inline]
    fn of_f32(v: f32) -> Self {
        v as f64
    }
}
