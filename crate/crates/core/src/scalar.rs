//! Scalar abstraction shared by the training code.
//!
//! Everything numeric in the crate is written against [`Scalar`], which is
//! implemented for `f32` and `f64`. The XOR/XORD experiments default to `f64`
//! and the MNIST network to `f32`; see the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + Debug + Display + FromStr + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    /// Lossy conversion to `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }

    /// ReLU.
    #[inline]
    fn relu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            Self::zero()
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product of two 2-vectors.
#[inline]
pub fn dot2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

/// Angle between two 2-vectors in degrees. Returns NaN if either is zero.
pub fn angle2_deg<T: Scalar>(a: [T; 2], b: [T; 2]) -> f64 {
    let (a0, a1, b0, b1) = (a[0].as_f64(), a[1].as_f64(), b[0].as_f64(), b[1].as_f64());
    let na = a0.hypot(a1);
    let nb = b0.hypot(b1);
    let cos = ((a0 * b0 + a1 * b1) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}
