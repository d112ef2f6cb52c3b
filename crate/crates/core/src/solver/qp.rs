//! Goldfarb-Idnani dual active-set method for `min c'x + (g/2)|x|^2`
//! subject to `C x >= b` rows, the first of which may be equalities.
//!
//! With a scaled identity Hessian the factor `J = L^{-T}` starts as `I/sqrt(g)`
//! and is updated with Givens rotations as constraints enter and leave.

use crate::scalar::{dot, Scalar};

pub(crate) struct QpRow<T> {
    pub coeffs: Vec<T>,
    pub rhs: T,
    pub is_eq: bool,
}

pub(crate) struct QpRaw<T> {
    pub ok: bool,
    pub infeasible: bool,
    pub x: Vec<T>,
    /// Multiplier per row in the convention `grad f = sum_k u_k C_k`.
    pub u: Vec<T>,
    pub iterations: usize,
}

struct Active<T> {
    row: usize,
    dir: T,
    u: T,
}

fn givens<T: Scalar>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    (a / h, b / h, h)
}

fn rotate_cols<T: Scalar>(jcols: &mut [Vec<T>], i: usize, k: usize, c: T, s: T) {
    let (lo, hi) = jcols.split_at_mut(k);
    let (ji, jk) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ji.iter_mut().zip(jk.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a + s * b;
        *y = -s * a + c * b;
    }
}

pub(crate) fn solve<T: Scalar>(g: T, c: &[T], rows: &[QpRow<T>], max_iterations: usize) -> QpRaw<T> {
    let n = c.len();
    let tol = T::solver_tol() * T::lit(1e-2);
    let mut x: Vec<T> = c.iter().map(|&ci| -ci / g).collect();
    let inv_sqrt = T::one() / g.sqrt();
    let mut jcols: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut col = vec![T::zero(); n];
            col[i] = inv_sqrt;
            col
        })
        .collect();
    let mut rcols: Vec<Vec<T>> = Vec::new();
    let mut active: Vec<Active<T>> = Vec::new();
    let mut is_active = vec![false; rows.len()];
    let mut skipped = vec![false; rows.len()];
    let mut iterations = 0;
    let fail = |x: Vec<T>, iterations, infeasible| QpRaw { ok: false, infeasible, x, u: vec![T::zero(); rows.len()], iterations };

    loop {
        iterations += 1;
        if iterations > max_iterations {
            return fail(x, iterations, false);
        }
        // equalities first, then the most violated inequality
        let mut pick: Option<(usize, T)> = None;
        for (k, row) in rows.iter().enumerate() {
            if is_active[k] || skipped[k] {
                continue;
            }
            let s = dot(&row.coeffs, &x) - row.rhs;
            if row.is_eq {
                pick = Some((k, s));
                break;
            }
            if s < -tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((k, s));
            }
        }
        let Some((p, s0)) = pick else {
            break;
        };
        let dir = if rows[p].is_eq && s0 > T::zero() { -T::one() } else { T::one() };
        let np: Vec<T> = rows[p].coeffs.iter().map(|&a| dir * a).collect();
        let mut sp = dir * s0;
        let mut u_plus = T::zero();
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return fail(x, iterations, false);
            }
            let q = active.len();
            let d: Vec<T> = jcols.iter().map(|col| dot(col, &np)).collect();
            let mut z = vec![T::zero(); n];
            for i in q..n {
                if d[i] != T::zero() {
                    for (zj, &jj) in z.iter_mut().zip(&jcols[i]) {
                        *zj += d[i] * jj;
                    }
                }
            }
            let mut r = vec![T::zero(); q];
            for i in (0..q).rev() {
                let s: T = (i + 1..q).map(|k| rcols[k][i] * r[k]).sum();
                r[i] = (d[i] - s) / rcols[i][i];
            }
            let mut t1 = T::infinity();
            let mut drop_at = None;
            for (k, a) in active.iter().enumerate() {
                if !rows[a.row].is_eq && r[k] > tol {
                    let t = a.u / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = dot(&z, &np);
            let znorm = z.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let t2 = if znorm <= tol * tol || zn <= tol * tol { T::infinity() } else { -sp / zn };
            if !t2.is_finite() && !t1.is_finite() {
                if sp.abs() <= T::lit(10.0) * tol {
                    // linearly dependent and already satisfied
                    skipped[p] = true;
                    break;
                }
                return fail(x, iterations, true);
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                for (xj, &zj) in x.iter_mut().zip(&z) {
                    *xj += t * zj;
                }
            }
            for (k, a) in active.iter_mut().enumerate() {
                a.u -= t * r[k];
            }
            u_plus += t;
            if t2 <= t1 {
                // full step: add the constraint
                let mut d = d;
                for i in (q + 1..n).rev() {
                    if d[i] != T::zero() {
                        let (cg, sg, h) = givens(d[i - 1], d[i]);
                        d[i - 1] = h;
                        d[i] = T::zero();
                        rotate_cols(&mut jcols, i - 1, i, cg, sg);
                    }
                }
                rcols.push(d[..=q].to_vec());
                active.push(Active { row: p, dir, u: u_plus });
                is_active[p] = true;
                break;
            }
            // partial step: drop the blocking constraint and retry
            let l = drop_at.expect("finite partial step");
            is_active[active[l].row] = false;
            active.remove(l);
            rcols.remove(l);
            let q = active.len();
            for k in l..q {
                let (cg, sg, h) = givens(rcols[k][k], rcols[k][k + 1]);
                rcols[k][k] = h;
                rcols[k].truncate(k + 1);
                for col in rcols.iter_mut().skip(k + 1) {
                    let (a, b) = (col[k], col[k + 1]);
                    col[k] = cg * a + sg * b;
                    col[k + 1] = -sg * a + cg * b;
                }
                rotate_cols(&mut jcols, k, k + 1, cg, sg);
            }
            sp = dir * (dot(&rows[p].coeffs, &x) - rows[p].rhs);
        }
    }
    let mut u = vec![T::zero(); rows.len()];
    for a in &active {
        u[a.row] = a.dir * a.u;
    }
    QpRaw { ok: true, infeasible: false, x, u, iterations }
}
