//! Scalar abstraction so the whole stack runs at either f32 or f64.
//!
//! f64 is used by the test suites (gradient checks need the headroom);
//! f32 roughly halves memory traffic and is the default for training and
//! inference at scale.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for tensors, grids, and geometry.
pub trait Scalar:
    num_traits::Float + Sum + Debug + Display + Default + Copy + Send + Sync + 'static
{
    /// Dtype tag used by the checkpoint format.
    const DTYPE: &'static str;

    /// Lossy conversion from f64 (widening for f64, rounding for f32).
    fn of(x: f64) -> Self;

    /// Exact widening to f64.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Squared Euclidean distance between two 3D points.
#[inline(always)]
pub fn dist2<S: Scalar>(a: [S; 3], b: [S; 3]) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(1.5).as_f64(), 1.5);
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(<f32 as Scalar>::DTYPE, "f32");
        assert_eq!(<f64 as Scalar>::DTYPE, "f64");
    }

    #[test]
    fn dist2_matches_hand_value() {
        assert_eq!(dist2([0.0, 0.0, 0.0], [1.0, 2.0, 2.0]), 9.0);
    }
}
