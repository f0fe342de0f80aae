//! Scalar abstraction: every numeric kernel in this crate is generic over
//! [`Scalar`] so the same code path runs at `f32` (production) and `f64`
//! (finite-difference verification).

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Floating-point element type for tensors and model parameters.
///
/// Reductions that feed reported numbers (means, losses, normalization
/// moments) accumulate in `f64` regardless of `E`; the conversions below are
/// the bridge.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty)*) => {$(
        impl Scalar for $t {
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn into_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_scalar!(f32 f64);
