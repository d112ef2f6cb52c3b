//! Tensor-product Bernstein polynomials on the unit cube.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `C(p,k) v^k (1-v)^(p-k)`.
pub fn basis<T: Scalar>(degree: usize, k: usize, v: T) -> T {
    T::lit(binomial(degree, k)) * v.powi(k as i32) * (T::one() - v).powi((degree - k) as i32)
}

/// Evaluates `sum_k c_k b_k(v)`. For `K > 1` the coefficient index is
/// mixed radix with the first axis most significant.
pub fn bernstein_eval<T: Scalar>(v: &[T], coeffs: &[T], degree: usize) -> Result<T> {
    let per_axis = degree + 1;
    if v.is_empty() || coeffs.len() != per_axis.pow(v.len() as u32) {
        return Err(Error::Dimension(format!(
            "{} coefficients for degree {degree} in {} dimensions",
            coeffs.len(),
            v.len()
        )));
    }
    let table: Vec<Vec<T>> = v.iter().map(|&x| (0..per_axis).map(|k| basis(degree, k, x)).collect()).collect();
    let mut total = T::zero();
    for (idx, &c) in coeffs.iter().enumerate() {
        let mut rest = idx;
        let mut w = T::one();
        for axis in (0..v.len()).rev() {
            w *= table[axis][rest % per_axis];
            rest /= per_axis;
        }
        total += c * w;
    }
    Ok(total)
}

/// Integral over the unit cube: every basis function integrates to `1/(p+1)` per axis.
pub fn bernstein_mean<T: Scalar>(coeffs: &[T]) -> T {
    coeffs.iter().copied().sum::<T>() / T::lit(coeffs.len() as f64)
}
