//! Scalar abstraction for the numeric core.
//!
//! Every quantity in this crate (distances, weights, marks, monomial values)
//! is generic over a floating-point scalar. [`Scalar`] bundles the arithmetic
//! surface the algorithms need with serde bounds for the file formats and a
//! per-type tolerance for metric-axiom validation: `1e-9` is meaningful at
//! `f64` precision but below representable rounding for `f32` at unit scale.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum<Self>
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Absolute tolerance for symmetry / zero-diagonal / triangle checks.
    fn metric_tol() -> Self;

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts into every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("every Scalar converts into f64")
    }
}

impl Scalar for f64 {
    fn metric_tol() -> f64 {
        1e-9
    }
}

impl Scalar for f32 {
    fn metric_tol() -> f32 {
        1e-4
    }
}

/// Shorthand for pulling f64 constants into generic code.
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}

/// Total order on scalars that are known to be non-NaN.
///
/// Construction-time validation rejects NaN everywhere, so a panic here marks
/// an internal invariant violation, not bad user input.
pub fn cmp_finite<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("NaN rejected at validation")
}
