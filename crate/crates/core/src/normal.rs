//! Standard normal distribution helpers.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::scalar::Scalar;

/// `Phi(x)`, accurate in both tails.
pub fn cdf<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    T::lit((0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).clamp(0.0, 1.0))
}

/// `1 - Phi(x)` without cancellation.
pub fn survival<T: Scalar>(x: T) -> T {
    cdf(-x)
}

/// `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn quantile<T: Scalar>(p: T) -> T {
    let n = Normal::standard();
    T::lit(n.inverse_cdf(p.to_f64_lossy()))
}
