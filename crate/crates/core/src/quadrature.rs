//! Adaptive tensor Gauss-Legendre quadrature on boxes and triangles.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gauss-Legendre rule with adaptive bisection of boxes whose estimate moves
/// by more than their share of the tolerance.
#[derive(Clone, Debug)]
pub struct Quadrature<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
    pub tol: T,
    pub max_depth: usize,
}

impl<T: Scalar> Default for Quadrature<T> {
    fn default() -> Self {
        Self::new(64, T::lit(1e-11).max(T::epsilon() * T::lit(64.0)))
    }
}

impl<T: Scalar> Quadrature<T> {
    pub fn new(nodes: usize, tol: T) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(nodes.max(1)).expect("nonzero"));
        let (nodes, weights) = rule.as_node_weight_pairs().iter().map(|&(x, w)| (T::lit(x), T::lit(w))).unzip();
        Self { nodes, weights, tol, max_depth: 16 }
    }

    fn rule_box<F: FnMut(&[T], &mut [T])>(&self, lo: &[T], hi: &[T], f: &mut F, out: &mut [T]) {
        let k = lo.len();
        let n = self.nodes.len();
        let half = T::lit(0.5);
        let scale: Vec<T> = lo.iter().zip(hi).map(|(&a, &b)| half * (b - a)).collect();
        let mid: Vec<T> = lo.iter().zip(hi).map(|(&a, &b)| half * (b + a)).collect();
        let jac: T = scale.iter().copied().fold(T::one(), |a, b| a * b);
        out.iter_mut().for_each(|o| *o = T::zero());
        let mut v = vec![T::zero(); k];
        let mut buf = vec![T::zero(); out.len()];
        let total = n.pow(k as u32);
        for idx in 0..total {
            let mut rest = idx;
            let mut w = jac;
            for axis in (0..k).rev() {
                let i = rest % n;
                rest /= n;
                v[axis] = mid[axis] + scale[axis] * self.nodes[i];
                w *= self.weights[i];
            }
            f(&v, &mut buf);
            for (o, &b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
    }

    fn adapt<F: FnMut(&[T], &mut [T])>(
        &self,
        lo: &[T],
        hi: &[T],
        coarse: Vec<T>,
        budget: T,
        depth: usize,
        f: &mut F,
    ) -> Result<Vec<T>> {
        let k = lo.len();
        let m = coarse.len();
        let children: Vec<(Vec<T>, Vec<T>)> = (0..1usize << k)
            .map(|mask| {
                let mut a = lo.to_vec();
                let mut b = hi.to_vec();
                for axis in 0..k {
                    let mid = T::lit(0.5) * (lo[axis] + hi[axis]);
                    if mask >> axis & 1 == 0 {
                        b[axis] = mid;
                    } else {
                        a[axis] = mid;
                    }
                }
                (a, b)
            })
            .collect();
        let mut ests = Vec::with_capacity(children.len());
        let mut fine = vec![T::zero(); m];
        for (a, b) in &children {
            let mut e = vec![T::zero(); m];
            self.rule_box(a, b, f, &mut e);
            for (x, &y) in fine.iter_mut().zip(&e) {
                *x += y;
            }
            ests.push(e);
        }
        let change = fine.iter().zip(&coarse).fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()));
        if change <= budget {
            return Ok(fine);
        }
        if depth >= self.max_depth {
            return Err(Error::Quadrature { tol: self.tol.to_f64_lossy(), change: change.to_f64_lossy() });
        }
        let share = budget / T::lit(children.len() as f64);
        let mut total = vec![T::zero(); m];
        for ((a, b), e) in children.iter().zip(ests) {
            let part = self.adapt(a, b, e, share, depth + 1, f)?;
            for (x, &y) in total.iter_mut().zip(&part) {
                *x += y;
            }
        }
        Ok(total)
    }

    /// Integrates an `m`-valued function over the box `[lo, hi]`.
    pub fn integrate_box<F: FnMut(&[T], &mut [T])>(&self, lo: &[T], hi: &[T], m: usize, mut f: F) -> Result<Vec<T>> {
        let mut coarse = vec![T::zero(); m];
        self.rule_box(lo, hi, &mut f, &mut coarse);
        self.adapt(lo, hi, coarse, self.tol, 0, &mut f)
    }

    /// Integrates over the triangle `{a <= v_other <= v_major <= b}` where
    /// `major` is the axis holding the larger coordinate.
    pub fn integrate_triangle<F: FnMut(&[T], &mut [T])>(
        &self,
        a: T,
        b: T,
        major: usize,
        m: usize,
        mut f: F,
    ) -> Result<Vec<T>> {
        let len = b - a;
        let mut v = [T::zero(); 2];
        let g = |st: &[T], out: &mut [T]| {
            let big = a + len * st[0];
            let small = a + len * st[0] * st[1];
            v[major] = big;
            v[1 - major] = small;
            f(&v, out);
            let jac = len * len * st[0];
            out.iter_mut().for_each(|o| *o *= jac);
        };
        self.integrate_box(&[T::zero(), T::zero()], &[T::one(), T::one()], m, g)
    }

    /// Integrates over a box; when `split_diagonal` is set and the box is a
    /// square straddling `v1 = v2`, the two triangles are handled separately
    /// so a kink along the diagonal does not slow convergence.
    pub fn integrate_region<F: FnMut(&[T], &mut [T])>(
        &self,
        lo: &[T],
        hi: &[T],
        m: usize,
        split_diagonal: bool,
        mut f: F,
    ) -> Result<Vec<T>> {
        let on_diagonal = lo.len() == 2 && lo[0] == lo[1] && hi[0] == hi[1];
        if split_diagonal && on_diagonal {
            let mut first = self.integrate_triangle(lo[0], hi[0], 0, m, &mut f)?;
            let second = self.integrate_triangle(lo[0], hi[0], 1, m, &mut f)?;
            for (x, y) in first.iter_mut().zip(second) {
                *x += y;
            }
            Ok(first)
        } else {
            self.integrate_box(lo, hi, m, f)
        }
    }
}
