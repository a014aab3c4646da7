//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the design and estimation code is generic over.
///
/// Implemented for `f64` (the default everywhere) and `f32`. The associated
/// tolerances scale with the precision of the type so that the same code path
/// is usable for both.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Default max-norm tolerance for estimating-equation residuals.
    const SOLVER_TOL: f64;
    /// Relative threshold under which a pivot or eigenvalue counts as zero.
    const RANK_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f64 {
    const SOLVER_TOL: f64 = 1e-8;
    const RANK_TOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const SOLVER_TOL: f64 = 1e-3;
    const RANK_TOL: f64 = 1e-6;
}

/// Max-norm of a vector.
pub fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}
