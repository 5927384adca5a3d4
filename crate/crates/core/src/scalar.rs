use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Feature scalar. Implemented for `f32` (standard) and `f64` (wide).
pub trait Scalar:
    Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;
    const BYTES: usize;

    fn from_wide(v: f64) -> Self;
    fn to_wide(self) -> f64;
    /// Appends the little-endian byte representation.
    fn extend_le(self, out: &mut Vec<u8>);
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn from_wide(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_wide(self) -> f64 {
        self as f64
    }
    fn extend_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn from_wide(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_wide(self) -> f64 {
        self
    }
    fn extend_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Casts a slice between scalar types through `f64`.
pub fn cast_slice<A: Scalar, B: Scalar>(src: &[A]) -> Vec<B> {
    src.iter().map(|v| B::from_wide(v.to_wide())).collect()
}
