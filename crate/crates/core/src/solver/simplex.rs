//! Dense bounded-variable two-phase primal simplex.
//!
//! Rows are scaled to unit max-norm, variables are shifted so every column
//! has bounds `[0, u]`, `<=` rows get slacks and rows without a feasible
//! starting slack get artificials. Dantzig pricing with a Harris ratio test;
//! after a run of degenerate pivots the method switches to Bland's rule.

use crate::scalar::Scalar;

use super::lu::Lu;
use super::SolveStatus;

pub(crate) struct RowRef<'a, T> {
    pub coeffs: &'a [T],
    pub rhs: T,
    pub is_eq: bool,
}

pub(crate) struct LpInput<'a, T> {
    pub c: &'a [T],
    pub rows: Vec<RowRef<'a, T>>,
    pub lower: &'a [T],
    pub upper: &'a [T],
}

pub(crate) struct LpRaw<T> {
    pub status: SolveStatus,
    pub x: Vec<T>,
    /// Multipliers in the convention `c + sum_r lambda_r a_r = box duals`.
    pub lambda: Vec<T>,
    pub iterations: usize,
    /// Farkas multipliers (unit max-norm) and their verified margin.
    pub certificate: Option<(Vec<T>, T)>,
}

#[derive(Clone, Copy)]
enum ColMap<T> {
    Shift(usize, T),
    Flip(usize, T),
    Pos(usize),
    Neg(usize),
}

impl<T: Scalar> ColMap<T> {
    fn source(self) -> (usize, T) {
        match self {
            ColMap::Shift(j, _) | ColMap::Pos(j) => (j, T::one()),
            ColMap::Flip(j, _) | ColMap::Neg(j) => (j, -T::one()),
        }
    }
}

struct Tableau<T> {
    m: usize,
    w: usize,
    t: Vec<T>,
    a0: Vec<T>,
    b0: Vec<T>,
    ub: Vec<T>,
    is_art: Vec<bool>,
    basic: Vec<usize>,
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    beta: Vec<T>,
    init_col: Vec<usize>,
    iterations: usize,
    max_iterations: usize,
    tol: T,
}

const NONBASIC: usize = usize::MAX;

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl<T: Scalar> Tableau<T> {
    fn value(&self, j: usize) -> T {
        match self.row_of[j] {
            NONBASIC => {
                if self.at_upper[j] {
                    self.ub[j]
                } else {
                    T::zero()
                }
            }
            r => self.beta[r],
        }
    }

    fn reduced_costs(&self, c: &[T]) -> Vec<T> {
        let mut d = c.to_vec();
        for r in 0..self.m {
            let cb = c[self.basic[r]];
            if cb != T::zero() {
                let row = &self.t[r * self.w..(r + 1) * self.w];
                for (dj, &a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Recomputes basic values from the original data through `B^{-1}`,
    /// which sits in the columns of the initial identity basis.
    fn refresh_beta(&mut self) {
        let mut rhs = self.b0.clone();
        for j in 0..self.w {
            if self.row_of[j] == NONBASIC && self.at_upper[j] {
                let u = self.ub[j];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a0[i * self.w + j] * u;
                }
            }
        }
        for r in 0..self.m {
            let row = &self.t[r * self.w..(r + 1) * self.w];
            self.beta[r] = (0..self.m).map(|i| row[self.init_col[i]] * rhs[i]).sum();
        }
    }

    fn pivot(&mut self, r: usize, q: usize, d: &mut [T]) {
        let w = self.w;
        let p = self.t[r * w + q];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let pivot_row: Vec<T> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + q];
            if f != T::zero() {
                let row = &mut self.t[i * w..(i + 1) * w];
                for (x, &pr) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * pr;
                }
                row[q] = T::zero();
            }
        }
        let f = d[q];
        if f != T::zero() {
            for (x, &pr) in d.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            d[q] = T::zero();
        }
        let leaving = self.basic[r];
        self.row_of[leaving] = NONBASIC;
        self.basic[r] = q;
        self.row_of[q] = r;
        self.at_upper[q] = false;
    }

    fn run(&mut self, c: &[T], phase_two: bool) -> PhaseEnd {
        let tol = self.tol;
        let piv_tol = tol;
        let mut d = self.reduced_costs(c);
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= self.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            if self.iterations % 64 == 63 {
                self.refresh_beta();
                d = self.reduced_costs(c);
            }
            // pricing
            let mut enter: Option<(usize, T)> = None;
            for j in 0..self.w {
                if self.row_of[j] != NONBASIC || self.ub[j] <= T::zero() || (phase_two && self.is_art[j]) {
                    continue;
                }
                let gain = if self.at_upper[j] { d[j] } else { -d[j] };
                if gain > tol {
                    if bland {
                        enter = Some((j, gain));
                        break;
                    }
                    if enter.is_none_or(|(_, g)| gain > g) {
                        enter = Some((j, gain));
                    }
                }
            }
            let Some((q, _)) = enter else {
                return PhaseEnd::Optimal;
            };
            let delta = if self.at_upper[q] { -T::one() } else { T::one() };
            let w = self.w;
            let col: Vec<T> = (0..self.m).map(|i| self.t[i * w + q]).collect();
            let ratio = |i: usize, slack: T| -> Option<(T, bool)> {
                let a = delta * col[i];
                let b = self.basic[i];
                if a > piv_tol {
                    Some(((self.beta[i] + slack) / a, false))
                } else if a < -piv_tol && self.ub[b].is_finite() {
                    Some(((self.ub[b] - self.beta[i] + slack) / (-a), true))
                } else {
                    None
                }
            };
            let mut leave: Option<(usize, T, bool)> = None;
            if bland {
                for i in 0..self.m {
                    if let Some((t, up)) = ratio(i, T::zero()) {
                        let t = t.max(T::zero());
                        let better = match leave {
                            None => true,
                            Some((k, tk, _)) => t < tk || (t == tk && self.basic[i] < self.basic[k]),
                        };
                        if better {
                            leave = Some((i, t, up));
                        }
                    }
                }
            } else {
                let mut tmax = T::infinity();
                for i in 0..self.m {
                    if let Some((t, _)) = ratio(i, tol) {
                        tmax = tmax.min(t);
                    }
                }
                if tmax.is_finite() {
                    let mut best = T::zero();
                    for i in 0..self.m {
                        if let Some((t, up)) = ratio(i, T::zero()) {
                            let a = col[i].abs();
                            if t <= tmax && a > best {
                                best = a;
                                leave = Some((i, t.max(T::zero()), up));
                            }
                        }
                    }
                }
            }
            let flip = self.ub[q];
            self.iterations += 1;
            let step = match leave {
                Some((_, t, _)) if t < flip => t,
                _ if flip.is_finite() => {
                    // bound flip of the entering column
                    for i in 0..self.m {
                        self.beta[i] -= delta * flip * col[i];
                    }
                    self.at_upper[q] = !self.at_upper[q];
                    degenerate = 0;
                    bland = false;
                    continue;
                }
                _ => return PhaseEnd::Unbounded,
            };
            let (r, _, to_upper) = leave.expect("ratio found");
            let leaving = self.basic[r];
            for i in 0..self.m {
                self.beta[i] -= delta * step * col[i];
            }
            let entering_value = if delta > T::zero() { step } else { self.ub[q] - step };
            self.pivot(r, q, &mut d);
            self.beta[r] = entering_value;
            self.at_upper[leaving] = to_upper;
            if step <= tol {
                degenerate += 1;
                if degenerate > 50 {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
        }
    }

    /// Pivots basic artificials at zero out of the basis where possible.
    fn drive_out_artificials(&mut self) {
        let mut dummy = vec![T::zero(); self.w];
        for r in 0..self.m {
            if !self.is_art[self.basic[r]] {
                continue;
            }
            let w = self.w;
            let q = (0..w)
                .filter(|&j| !self.is_art[j] && self.row_of[j] == NONBASIC)
                .max_by(|&a, &b| self.t[r * w + a].abs().partial_cmp(&self.t[r * w + b].abs()).expect("finite"));
            if let Some(q) = q {
                if self.t[r * w + q].abs() > T::lit(1e-7) {
                    let value = self.value(q);
                    let leaving = self.basic[r];
                    self.pivot(r, q, &mut dummy);
                    self.at_upper[leaving] = false;
                    self.beta[r] = value;
                }
            }
        }
        for j in 0..self.w {
            if self.is_art[j] {
                self.ub[j] = T::zero();
            }
        }
        self.refresh_beta();
    }

    /// Re-solves the final basis with a fresh factorization.
    fn refine(&mut self, c: &[T]) -> Option<Vec<T>> {
        let m = self.m;
        let w = self.w;
        let mut b = vec![T::zero(); m * m];
        for (k, &j) in self.basic.iter().enumerate() {
            for i in 0..m {
                b[i * m + k] = self.a0[i * w + j];
            }
        }
        let lu = Lu::new(b, m)?;
        let mut rhs = self.b0.clone();
        for j in 0..w {
            if self.row_of[j] == NONBASIC && self.at_upper[j] {
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a0[i * w + j] * self.ub[j];
                }
            }
        }
        self.beta = lu.solve(&rhs);
        let cb: Vec<T> = self.basic.iter().map(|&j| c[j]).collect();
        Some(lu.solve_transpose(&cb))
    }

    fn residual(&self) -> T {
        let mut worst = T::zero();
        let vals: Vec<T> = (0..self.w).map(|j| self.value(j)).collect();
        for i in 0..self.m {
            let s: T = (0..self.w).map(|j| self.a0[i * self.w + j] * vals[j]).sum();
            worst = worst.max((s - self.b0[i]).abs());
        }
        for (j, &v) in vals.iter().enumerate() {
            worst = worst.max(-v).max(v - self.ub[j]);
        }
        worst
    }
}

pub(crate) fn solve<T: Scalar>(input: &LpInput<'_, T>, max_iterations: usize) -> LpRaw<T> {
    let n = input.c.len();
    let tol = T::solver_tol();
    let mut cols: Vec<ColMap<T>> = Vec::with_capacity(n);
    let mut ub: Vec<T> = Vec::new();
    for j in 0..n {
        let (l, u) = (input.lower[j], input.upper[j]);
        if l.is_finite() {
            cols.push(ColMap::Shift(j, l));
            ub.push(if u.is_finite() { u - l } else { T::infinity() });
        } else if u.is_finite() {
            cols.push(ColMap::Flip(j, u));
            ub.push(T::infinity());
        } else {
            cols.push(ColMap::Pos(j));
            cols.push(ColMap::Neg(j));
            ub.push(T::infinity());
            ub.push(T::infinity());
        }
    }
    let shift = |j: usize| -> T {
        cols.iter()
            .find_map(|c| match *c {
                ColMap::Shift(k, l) if k == j => Some(l),
                ColMap::Flip(k, u) if k == j => Some(u),
                _ => None,
            })
            .unwrap_or(T::zero())
    };
    let shifts: Vec<T> = (0..n).map(shift).collect();

    // Row preprocessing. Zero rows are checked directly.
    struct StdRow {
        orig: usize,
        scale: f64,
        sign: f64,
        slack: bool,
        art: bool,
    }
    let mut std_rows: Vec<StdRow> = Vec::new();
    let mut trivial_conflict: Option<usize> = None;
    for (r, row) in input.rows.iter().enumerate() {
        let s = row.coeffs.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if s == T::zero() {
            let bad = if row.is_eq { row.rhs.abs() > tol } else { row.rhs < -tol };
            if bad && trivial_conflict.is_none() {
                trivial_conflict = Some(r);
            }
            continue;
        }
        let offset: T = row.coeffs.iter().zip(&shifts).map(|(&a, &h)| a * h).sum();
        let b = (row.rhs - offset) / s;
        let sign = if b < T::zero() { -1.0 } else { 1.0 };
        let slack = !row.is_eq;
        let art = row.is_eq || sign < 0.0;
        std_rows.push(StdRow { orig: r, scale: s.to_f64_lossy(), sign, slack, art });
    }
    if let Some(r) = trivial_conflict {
        let mut y = vec![T::zero(); input.rows.len()];
        y[r] = if input.rows[r].is_eq && input.rows[r].rhs > T::zero() { -T::one() } else { T::one() };
        let margin = certificate_margin(input, &y);
        return LpRaw {
            status: if margin.is_some() { SolveStatus::Infeasible } else { SolveStatus::NumericalFailure },
            x: vec![T::zero(); n],
            lambda: vec![T::zero(); input.rows.len()],
            iterations: 0,
            certificate: margin.map(|m| (y, m)),
        };
    }

    let m = std_rows.len();
    let ns = cols.len();
    let n_slack = std_rows.iter().filter(|r| r.slack).count();
    let n_art = std_rows.iter().filter(|r| r.art).count();
    let w = ns + n_slack + n_art;
    let mut a0 = vec![T::zero(); m * w];
    let mut b0 = vec![T::zero(); m];
    let mut is_art = vec![false; w];
    ub.resize(w, T::infinity());
    let mut init_col = vec![0; m];
    let (mut next_slack, mut next_art) = (ns, ns + n_slack);
    for (i, sr) in std_rows.iter().enumerate() {
        let row = &input.rows[sr.orig];
        let f = T::lit(sr.sign / sr.scale);
        for (k, cm) in cols.iter().enumerate() {
            let (j, sgn) = cm.source();
            a0[i * w + k] = f * sgn * row.coeffs[j];
        }
        let offset: T = row.coeffs.iter().zip(&shifts).map(|(&a, &h)| a * h).sum();
        b0[i] = f * (row.rhs - offset);
        if sr.slack {
            a0[i * w + next_slack] = T::lit(sr.sign);
            if !sr.art {
                init_col[i] = next_slack;
            }
            next_slack += 1;
        }
        if sr.art {
            a0[i * w + next_art] = T::one();
            is_art[next_art] = true;
            init_col[i] = next_art;
            next_art += 1;
        }
    }
    let mut row_of = vec![NONBASIC; w];
    for (i, &j) in init_col.iter().enumerate() {
        row_of[j] = i;
    }
    let mut tab = Tableau {
        m,
        w,
        t: a0.clone(),
        a0,
        beta: b0.clone(),
        b0,
        ub,
        is_art,
        basic: init_col.clone(),
        row_of,
        at_upper: vec![false; w],
        init_col,
        iterations: 0,
        max_iterations,
        tol,
    };

    let cost1: Vec<T> = tab.is_art.iter().map(|&a| if a { T::one() } else { T::zero() }).collect();
    let mut cost2 = vec![T::zero(); w];
    for (k, cm) in cols.iter().enumerate() {
        let (j, sgn) = cm.source();
        cost2[k] = sgn * input.c[j];
    }

    let lambda_from = |pi: &[T]| -> Vec<T> {
        let mut lambda = vec![T::zero(); input.rows.len()];
        for (i, sr) in std_rows.iter().enumerate() {
            lambda[sr.orig] = -pi[i] * T::lit(sr.sign / sr.scale);
        }
        lambda
    };
    let failure = |iterations| LpRaw {
        status: SolveStatus::NumericalFailure,
        x: vec![T::zero(); n],
        lambda: vec![T::zero(); input.rows.len()],
        iterations,
        certificate: None,
    };

    if n_art > 0 {
        match tab.run(&cost1, false) {
            PhaseEnd::Optimal => {}
            _ => return failure(tab.iterations),
        }
        tab.refresh_beta();
        let infeas: T = (0..w).filter(|&j| tab.is_art[j]).map(|j| tab.value(j)).sum();
        if infeas > T::lit(10.0) * tol {
            let d = tab.reduced_costs(&cost1);
            let pi: Vec<T> = (0..m).map(|i| cost1[tab.init_col[i]] - d[tab.init_col[i]]).collect();
            // phase-one duals mapped to the original rows form the Farkas vector
            let y = lambda_from(&pi);
            let y = normalize_certificate(input, y);
            return match y.and_then(|y| certificate_margin(input, &y).map(|mg| (y, mg))) {
                Some((y, margin)) => LpRaw {
                    status: SolveStatus::Infeasible,
                    x: vec![T::zero(); n],
                    lambda: vec![T::zero(); input.rows.len()],
                    iterations: tab.iterations,
                    certificate: Some((y, margin)),
                },
                None => failure(tab.iterations),
            };
        }
        tab.drive_out_artificials();
    }

    let end = tab.run(&cost2, true);
    match end {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            return LpRaw { status: SolveStatus::Unbounded, ..failure(tab.iterations) };
        }
        PhaseEnd::IterationLimit => return failure(tab.iterations),
    }
    tab.refresh_beta();
    let mut pi: Vec<T> = {
        let d = tab.reduced_costs(&cost2);
        (0..m).map(|i| cost2[tab.init_col[i]] - d[tab.init_col[i]]).collect()
    };
    if tab.residual() > tol {
        match tab.refine(&cost2) {
            Some(p) => pi = p,
            None => return failure(tab.iterations),
        }
        if tab.residual() > T::lit(10.0) * tol {
            return failure(tab.iterations);
        }
    }
    let mut x = shifts.clone();
    for (k, cm) in cols.iter().enumerate() {
        let (j, sgn) = cm.source();
        x[j] += sgn * tab.value(k);
    }
    LpRaw { status: SolveStatus::Optimal, x, lambda: lambda_from(&pi), iterations: tab.iterations, certificate: None }
}

/// Clears wrong-signed inequality entries that are numerical noise and scales
/// to unit max-norm. Returns `None` if a substantial entry has the wrong sign.
fn normalize_certificate<T: Scalar>(input: &LpInput<'_, T>, mut y: Vec<T>) -> Option<Vec<T>> {
    let big = y.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if big == T::zero() {
        return None;
    }
    for (v, row) in y.iter_mut().zip(&input.rows) {
        *v /= big;
        if !row.is_eq && *v < T::zero() {
            if *v < -T::lit(1e-7) {
                return None;
            }
            *v = T::zero();
        }
    }
    Some(y)
}

/// `min over the box of sum_r y_r (a_r x - b_r)`, if it is a finite positive
/// number above the certificate threshold.
pub(crate) fn certificate_margin<T: Scalar>(input: &LpInput<'_, T>, y: &[T]) -> Option<T> {
    let n = input.c.len();
    let mut g = vec![T::zero(); n];
    let mut beta = T::zero();
    let mut scale = T::zero();
    for (row, &yr) in input.rows.iter().zip(y) {
        if yr == T::zero() {
            continue;
        }
        if !row.is_eq && yr < T::zero() {
            return None;
        }
        for (gj, &a) in g.iter_mut().zip(row.coeffs) {
            *gj += yr * a;
            scale = scale.max((yr * a).abs());
        }
        beta += yr * row.rhs;
    }
    let tiny = T::lit(1e-11) * scale.max(T::one());
    let mut margin = -beta;
    for j in 0..n {
        let gj = g[j];
        if gj.abs() <= tiny {
            // treat as zero but charge the worst case over a bounded range
            let range = input.lower[j].abs().max(input.upper[j].abs());
            if range.is_finite() {
                margin -= gj.abs() * range;
            }
            continue;
        }
        let bound = if gj > T::zero() { input.lower[j] } else { input.upper[j] };
        if !bound.is_finite() {
            return None;
        }
        margin += gj * bound;
    }
    (margin > T::lit(1e-9)).then_some(margin)
}
