//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type used for flows, times, capacities and solver iterates.
///
/// Implemented for `f32` and `f64`. Every algorithm in the crate is written
/// against this trait; the concrete aliases at the crate root pin `f64`,
/// which is what the solvers' default tolerances are calibrated for.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon of the underlying type.
    const EPS: Self;

    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Scalar for f64 {
    const EPS: Self = f64::EPSILON;
}

/// `Σ aᵢ bᵢ` over two equally long slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

/// Relative ℓ₂ distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_l2<T: Scalar>(a: &[T], b: &[T]) -> T {
    let diff: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    diff.sqrt() / norm2(b).max(T::min_positive_value())
}
