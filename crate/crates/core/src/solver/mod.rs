//! Linear and regularized quadratic programs over a [`ConstraintSystem`].
//!
//! Multipliers follow one convention for both problem classes: with `f` the
//! objective actually minimized (`-e1'eta` for a maximization),
//! `grad f + A_eq' l_eq + A_in' l_in + nu = 0`, `l_in >= 0`, and
//! `nu_j > 0` only at an upper bound, `nu_j < 0` only at a lower bound.

mod lu;
pub(crate) mod qp;
pub(crate) mod simplex;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ConstraintSystem;
use crate::scalar::{dot, max_abs, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    fn sign<T: Scalar>(self) -> T {
        match self {
            Direction::Min => T::one(),
            Direction::Max => -T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome<T> {
    pub status: SolveStatus,
    /// Optimal value in the requested orientation.
    pub value: T,
    pub solution: Vec<T>,
    /// Equality multipliers, then inequality multipliers (then the extra row, if any).
    pub multipliers: Vec<T>,
    pub bound_multipliers: Vec<T>,
    pub iterations: usize,
    pub primal_residual: T,
    pub dual_residual: T,
    pub complementarity_residual: T,
    /// Farkas vector over the rows (same order as `multipliers`) when infeasible.
    pub certificate: Option<Vec<T>>,
    pub certificate_margin: Option<T>,
}

impl<T: Scalar> SolveOutcome<T> {
    fn failed(status: SolveStatus, n: usize, rows: usize, iterations: usize) -> Self {
        Self {
            status,
            value: T::nan(),
            solution: vec![T::nan(); n],
            multipliers: vec![T::zero(); rows],
            bound_multipliers: vec![T::zero(); n],
            iterations,
            primal_residual: T::nan(),
            dual_residual: T::nan(),
            complementarity_residual: T::nan(),
            certificate: None,
            certificate_margin: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Inequality rows (indices into the inequality block) with positive multipliers.
    pub fn active_inequalities(&self, eq_rows: usize) -> Vec<usize> {
        self.multipliers[eq_rows..].iter().enumerate().filter(|(_, &l)| l > T::solver_tol()).map(|(i, _)| i).collect()
    }

    /// Plain-text KKT report.
    pub fn write_kkt<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "status {:?}", self.status)?;
        writeln!(w, "value {}", self.value)?;
        writeln!(w, "iterations {}", self.iterations)?;
        writeln!(w, "primal_residual {:e}", self.primal_residual.to_f64_lossy())?;
        writeln!(w, "dual_residual {:e}", self.dual_residual.to_f64_lossy())?;
        writeln!(w, "complementarity_residual {:e}", self.complementarity_residual.to_f64_lossy())?;
        if let Some(m) = self.certificate_margin {
            writeln!(w, "certificate_margin {:e}", m.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Solver settings. The engine itself holds no state, so one value can be
/// shared by any number of threads; each call builds its own working arrays.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Engine {
    pub max_iterations: Option<usize>,
}

/// Extra `<=` row appended to a system.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtraRow<T> {
    pub coeffs: Vec<T>,
    pub rhs: T,
}

impl<T: Scalar> ExtraRow<T> {
    /// `sign * eta_k <= rhs`.
    pub fn coordinate(n: usize, k: usize, sign: T, rhs: T) -> Self {
        let mut coeffs = vec![T::zero(); n];
        coeffs[k] = sign;
        Self { coeffs, rhs }
    }
}

struct Rows<'a, T> {
    system: &'a ConstraintSystem<T>,
    extra: Option<&'a ExtraRow<T>>,
}

impl<'a, T: Scalar> Rows<'a, T> {
    fn count(&self) -> usize {
        self.system.eq.len() + self.system.ineq.len() + usize::from(self.extra.is_some())
    }

    fn get(&self, r: usize) -> (&'a [T], T, bool) {
        let (ne, ni) = (self.system.eq.len(), self.system.ineq.len());
        if r < ne {
            (self.system.eq.row(r), self.system.eq.rhs[r], true)
        } else if r < ne + ni {
            (self.system.ineq.row(r - ne), self.system.ineq.rhs[r - ne], false)
        } else {
            let e = self.extra.expect("extra row");
            (&e.coeffs, e.rhs, false)
        }
    }
}

/// Residuals of a candidate KKT point, each in row-scaled units.
fn kkt<T: Scalar>(rows: &Rows<'_, T>, grad: &[T], x: &[T], lambda: &[T]) -> (Vec<T>, T, T, T) {
    let sys = rows.system;
    let n = x.len();
    let mut nu: Vec<T> = grad.to_vec();
    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut comp = T::zero();
    for r in 0..rows.count() {
        let (a, b, is_eq) = rows.get(r);
        let scale = max_abs(a).max(T::min_positive_value());
        let res = (dot(a, x) - b) / scale;
        if is_eq {
            primal = primal.max(res.abs());
        } else {
            primal = primal.max(res);
            dual = dual.max(-lambda[r] * scale);
            comp = comp.max((lambda[r] * scale * res).abs());
        }
        if lambda[r] != T::zero() {
            for (v, &aj) in nu.iter_mut().zip(a) {
                *v += lambda[r] * aj;
            }
        }
    }
    for v in nu.iter_mut() {
        *v = -*v;
    }
    let gscale = max_abs(grad).max(T::one());
    for j in 0..n {
        let (l, u) = (sys.lower[j], sys.upper[j]);
        primal = primal.max(l - x[j]).max(x[j] - u);
        let v = nu[j] / gscale;
        if v > T::zero() {
            if u.is_finite() {
                comp = comp.max((v * (u - x[j])).abs());
            } else {
                dual = dual.max(v);
            }
        } else if v < T::zero() {
            if l.is_finite() {
                comp = comp.max((v * (x[j] - l)).abs());
            } else {
                dual = dual.max(-v);
            }
        }
    }
    (nu, primal, dual, comp)
}

impl Engine {
    fn lp_iterations(&self, rows: usize, cols: usize) -> usize {
        self.max_iterations.unwrap_or(50 * (rows + cols) + 1000)
    }

    /// Minimizes or maximizes `c'eta` over the system plus an optional extra row.
    pub fn solve_lp_objective<T: Scalar>(
        &self,
        system: &ConstraintSystem<T>,
        c: &[T],
        extra: Option<&ExtraRow<T>>,
        direction: Direction,
    ) -> Result<SolveOutcome<T>> {
        let n = system.cols();
        if c.len() != n || extra.is_some_and(|e| e.coeffs.len() != n) {
            return Err(Error::Dimension("objective or extra row length differs from the system".into()));
        }
        if !system.violations().is_empty() {
            return Err(Error::InvalidSpec("malformed constraint system".into()));
        }
        let sign = direction.sign::<T>();
        let cs: Vec<T> = c.iter().map(|&v| sign * v).collect();
        let rows = Rows { system, extra };
        let input = simplex::LpInput {
            c: &cs,
            rows: (0..rows.count())
                .map(|r| {
                    let (coeffs, rhs, is_eq) = rows.get(r);
                    simplex::RowRef { coeffs, rhs, is_eq }
                })
                .collect(),
            lower: &system.lower,
            upper: &system.upper,
        };
        let raw = simplex::solve(&input, self.lp_iterations(rows.count(), n));
        let mut out = SolveOutcome::failed(raw.status, n, rows.count(), raw.iterations);
        match raw.status {
            SolveStatus::Optimal => {
                let (nu, p, d, cmp) = kkt(&rows, &cs, &raw.x, &raw.lambda);
                out.value = sign * dot(&cs, &raw.x);
                out.solution = raw.x;
                out.multipliers = raw.lambda;
                out.bound_multipliers = nu;
                out.primal_residual = p;
                out.dual_residual = d;
                out.complementarity_residual = cmp;
                if p > T::lit(1e-8) || d > T::lit(1e-8) || cmp > T::lit(1e-8) {
                    log::warn!("LP KKT residuals above tolerance: primal {p} dual {d} comp {cmp}");
                    if p > T::lit(1e-6) {
                        out.status = SolveStatus::NumericalFailure;
                    }
                }
            }
            SolveStatus::Infeasible => {
                let (y, margin) = raw.certificate.expect("certificate accompanies infeasibility");
                out.certificate = Some(y);
                out.certificate_margin = Some(margin);
            }
            _ => {}
        }
        Ok(out)
    }

    /// Optimizes `e1'eta`.
    pub fn solve_lp<T: Scalar>(&self, system: &ConstraintSystem<T>, direction: Direction) -> Result<SolveOutcome<T>> {
        let c = unit(system.cols(), 0);
        self.solve_lp_objective(system, &c, None, direction)
    }

    /// Optimizes `eta_k` over the system intersected with one extra half-space.
    pub fn solve_lp_with_extra_row<T: Scalar>(
        &self,
        system: &ConstraintSystem<T>,
        extra: Option<&ExtraRow<T>>,
        k: usize,
        direction: Direction,
    ) -> Result<SolveOutcome<T>> {
        if k >= system.cols() {
            return Err(Error::Dimension(format!("coordinate {k} out of range")));
        }
        let c = unit(system.cols(), k);
        self.solve_lp_objective(system, &c, extra, direction)
    }

    /// `min e1'eta + mu |eta|^2` (Min) or `-min(-e1'eta + mu |eta|^2)` (Max).
    pub fn solve_regularized<T: Scalar>(
        &self,
        system: &ConstraintSystem<T>,
        direction: Direction,
        mu: T,
    ) -> Result<SolveOutcome<T>> {
        if !(mu > T::zero()) {
            return Err(Error::InvalidSpec("regularization weight must be positive".into()));
        }
        let n = system.cols();
        let c = unit::<T>(n, 0);
        self.solve_qp(system, &c, direction, mu)
    }

    /// `min sign*c'eta + mu |eta|^2`, value reported in the requested orientation.
    pub fn solve_qp<T: Scalar>(
        &self,
        system: &ConstraintSystem<T>,
        c: &[T],
        direction: Direction,
        mu: T,
    ) -> Result<SolveOutcome<T>> {
        let n = system.cols();
        if !system.violations().is_empty() || c.len() != n {
            return Err(Error::InvalidSpec("malformed constraint system".into()));
        }
        let sign = direction.sign::<T>();
        let cs: Vec<T> = c.iter().map(|&v| sign * v).collect();
        let rows = Rows { system, extra: None };
        // map every row to `C x >= b`, unit max-norm, equalities first
        let mut qrows: Vec<qp::QpRow<T>> = Vec::new();
        let mut origin: Vec<(Origin, T)> = Vec::new();
        for r in 0..rows.count() {
            let (a, b, is_eq) = rows.get(r);
            let s = max_abs(a);
            if s == T::zero() {
                continue;
            }
            let f = if is_eq { T::one() / s } else { -T::one() / s };
            qrows.push(qp::QpRow { coeffs: a.iter().map(|&v| f * v).collect(), rhs: f * b, is_eq });
            origin.push((Origin::Row(r), f));
        }
        for j in 0..n {
            let (l, u) = (system.lower[j], system.upper[j]);
            let e = unit::<T>(n, j);
            if l.is_finite() && u.is_finite() && l == u {
                qrows.push(qp::QpRow { coeffs: e, rhs: l, is_eq: true });
                origin.push((Origin::Bound, T::one()));
                continue;
            }
            if l.is_finite() {
                qrows.push(qp::QpRow { coeffs: e.clone(), rhs: l, is_eq: false });
                origin.push((Origin::Bound, T::one()));
            }
            if u.is_finite() {
                qrows.push(qp::QpRow { coeffs: e.iter().map(|&v| -v).collect(), rhs: -u, is_eq: false });
                origin.push((Origin::Bound, -T::one()));
            }
        }
        let mut order: Vec<usize> = (0..qrows.len()).collect();
        order.sort_by_key(|&k| !qrows[k].is_eq);
        let sorted: Vec<qp::QpRow<T>> = order.iter().map(|&k| qp::QpRow { coeffs: qrows[k].coeffs.clone(), rhs: qrows[k].rhs, is_eq: qrows[k].is_eq }).collect();
        let two_mu = mu + mu;
        let max_it = self.max_iterations.unwrap_or(20 * (sorted.len() + n) + 1000);
        let raw = qp::solve(two_mu, &cs, &sorted, max_it);
        let mut out = SolveOutcome::failed(SolveStatus::NumericalFailure, n, rows.count(), raw.iterations);
        if !raw.ok {
            if raw.infeasible {
                // the LP machinery issues the certificate
                let lp = self.solve_lp_objective(system, &cs, None, Direction::Min)?;
                if lp.status == SolveStatus::Infeasible {
                    out.status = SolveStatus::Infeasible;
                    out.certificate = lp.certificate;
                    out.certificate_margin = lp.certificate_margin;
                }
            }
            return Ok(out);
        }
        let mut lambda = vec![T::zero(); rows.count()];
        for (pos, &k) in order.iter().enumerate() {
            let u = raw.u[pos];
            if u == T::zero() {
                continue;
            }
            if let (Origin::Row(r), f) = origin[k] {
                // grad f = u * f * a_r  =>  lambda_r = -u f
                lambda[r] = -u * f;
            }
        }
        let grad: Vec<T> = cs.iter().zip(&raw.x).map(|(&ci, &xi)| ci + two_mu * xi).collect();
        let (nu, p, d, cmp) = kkt(&rows, &grad, &raw.x, &lambda);
        let obj = dot(&cs, &raw.x) + mu * dot(&raw.x, &raw.x);
        out.status = SolveStatus::Optimal;
        out.value = sign * obj;
        out.solution = raw.x;
        out.multipliers = lambda;
        out.bound_multipliers = nu;
        out.primal_residual = p;
        out.dual_residual = d;
        out.complementarity_residual = cmp;
        if p > T::lit(1e-8) || d > T::lit(1e-8) || cmp > T::lit(1e-8) {
            log::warn!("QP KKT residuals above tolerance: primal {p} dual {d} comp {cmp}");
            if p > T::lit(1e-6) {
                out.status = SolveStatus::NumericalFailure;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
enum Origin {
    Row(usize),
    Bound,
}

fn unit<T: Scalar>(n: usize, k: usize) -> Vec<T> {
    let mut e = vec![T::zero(); n];
    e[k] = T::one();
    e
}

/// [`Engine::solve_lp`] with default settings.
pub fn solve_lp<T: Scalar>(system: &ConstraintSystem<T>, direction: Direction) -> Result<SolveOutcome<T>> {
    Engine::default().solve_lp(system, direction)
}

/// [`Engine::solve_regularized`] with default settings.
pub fn solve_regularized<T: Scalar>(system: &ConstraintSystem<T>, direction: Direction, mu: T) -> Result<SolveOutcome<T>> {
    Engine::default().solve_regularized(system, direction, mu)
}

/// [`Engine::solve_lp_with_extra_row`] with default settings.
pub fn solve_lp_with_extra_row<T: Scalar>(
    system: &ConstraintSystem<T>,
    extra: Option<&ExtraRow<T>>,
    k: usize,
    direction: Direction,
) -> Result<SolveOutcome<T>> {
    Engine::default().solve_lp_with_extra_row(system, extra, k, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockLayout;

    fn system(lower: &[f64], upper: &[f64]) -> ConstraintSystem<f64> {
        // one cell, one covariate value, no instruments: three columns
        let mut s = ConstraintSystem::new(BlockLayout::new(1, 1, 0));
        s.lower = lower.to_vec();
        s.upper = upper.to_vec();
        s
    }

    #[test]
    fn box_maximum() {
        let s = system(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        let r = solve_lp(&s, Direction::Max).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.value - 1.0).abs() < 1e-12);
        assert!(r.bound_multipliers[0] != 0.0);
    }

    #[test]
    fn infeasible_rows_carry_certificate() {
        let mut s = system(&[-5.0, 0.0, 0.0], &[5.0, 1.0, 1.0]);
        s.ineq.push_sparse(&[(0, 1.0)], 0.0, "a");
        s.ineq.push_sparse(&[(0, -1.0)], -1.0, "b");
        let r = solve_lp(&s, Direction::Min).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        let y = r.certificate.unwrap();
        assert!(y.iter().all(|&v| v >= -1e-12));
        assert!(r.certificate_margin.unwrap() > 1e-9);
    }

    #[test]
    fn equality_multiplier_sign() {
        // min x0 s.t. x0 - x1 = 0, x1 in [0.25, 1]
        let mut s = system(&[-5.0, 0.25, 0.0], &[5.0, 1.0, 0.0]);
        s.eq.push_sparse(&[(0, 1.0), (1, -1.0)], 0.0, "tie");
        let r = solve_lp(&s, Direction::Min).unwrap();
        assert!((r.value - 0.25).abs() < 1e-12);
        // 1 + l = 0
        assert!((r.multipliers[0] + 1.0).abs() < 1e-10);
        assert!(r.primal_residual < 1e-12 && r.dual_residual < 1e-12);
    }

    #[test]
    fn regularized_objectives() {
        let s = system(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        let r = solve_regularized(&s, Direction::Min, 0.5).unwrap();
        assert!(r.is_optimal() && r.value.abs() < 1e-14);
        let s = system(&[0.0, 0.0, 0.0], &[2.0, 0.0, 0.0]);
        // max x - 0.5 x^2 is 0.5 at x = 1
        let r = solve_regularized(&s, Direction::Max, 0.5).unwrap();
        assert!((r.solution[0] - 1.0).abs() < 1e-12);
        assert!((r.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regularized_with_rows() {
        // min x0 + mu|x|^2 s.t. x0 - x1 = 0, x1 >= 0.5 (as -x1 <= -0.5)
        let mut s = system(&[-5.0, -5.0, 0.0], &[5.0, 5.0, 0.0]);
        s.eq.push_sparse(&[(0, 1.0), (1, -1.0)], 0.0, "tie");
        s.ineq.push_sparse(&[(1, -1.0)], -0.5, "floor");
        let r = solve_regularized(&s, Direction::Min, 0.1).unwrap();
        assert!(r.is_optimal());
        assert!((r.solution[0] - 0.5).abs() < 1e-12);
        assert!(r.multipliers[1] > 0.0);
        assert!(r.dual_residual < 1e-10 && r.complementarity_residual < 1e-10);
    }

    #[test]
    fn extra_row_restricts() {
        let s = system(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        let e = ExtraRow::coordinate(3, 0, 1.0, 0.3);
        let r = solve_lp_with_extra_row(&s, Some(&e), 0, Direction::Max).unwrap();
        assert!((r.value - 0.3).abs() < 1e-12);
        assert_eq!(r.multipliers.len(), 1);
    }

    #[test]
    fn unbounded_is_reported() {
        let s = system(&[f64::NEG_INFINITY, 0.0, 0.0], &[f64::INFINITY, 1.0, 1.0]);
        assert_eq!(solve_lp(&s, Direction::Max).unwrap().status, SolveStatus::Unbounded);
    }
}
