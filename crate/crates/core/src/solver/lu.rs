//! Dense LU factorization with partial pivoting.

use crate::scalar::Scalar;

pub struct Lu<T> {
    n: usize,
    a: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Factorizes a row-major `n x n` matrix. Returns `None` when singular.
    pub fn new(mut a: Vec<T>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(T::zero(), |m, x| m.max(x.abs())).max(T::min_positive_value());
        for k in 0..n {
            let (p, big) = (k..n).map(|i| (i, a[i * n + k].abs())).fold((k, T::zero()), |b, c| if c.1 > b.1 { c } else { b });
            if big <= scale * T::epsilon() * T::lit(16.0) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let u = a[k * n + j];
                        a[i * n + j] -= f * u;
                    }
                }
            }
        }
        Some(Self { n, a, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: T = (0..i).map(|j| self.a[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: T = (i + 1..n).map(|j| self.a[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.a[i * n + i];
        }
        x
    }

    /// Solves `A' y = c`.
    pub fn solve_transpose(&self, c: &[T]) -> Vec<T> {
        let n = self.n;
        let mut w = c.to_vec();
        for i in 0..n {
            let s: T = (0..i).map(|j| self.a[j * n + i] * w[j]).sum();
            w[i] = (w[i] - s) / self.a[i * n + i];
        }
        for i in (0..n).rev() {
            let s: T = (i + 1..n).map(|j| self.a[j * n + i] * w[j]).sum();
            w[i] -= s;
        }
        let mut y = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            y[p] = w[k];
        }
        y
    }
}
