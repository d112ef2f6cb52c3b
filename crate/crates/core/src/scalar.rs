use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type the whole pipeline is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Pivot and feasibility tolerance for the solvers.
    fn solver_tol() -> Self;

    /// Tolerance used when comparing knots and probabilities.
    fn knot_tol() -> Self;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn solver_tol() -> f64 {
        1e-9
    }
    fn knot_tol() -> f64 {
        1e-12
    }
}

impl Scalar for f32 {
    fn solver_tol() -> f32 {
        2e-5
    }
    fn knot_tol() -> f32 {
        1e-6
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}
