//! Bounds by convex relaxation (CvR), under a threshold model (MST), and the
//! instrument-intersection bounds of Manski and Heckman-Vytlacil, plus a grid
//! search over the exact bilinear program for tiny instances.

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble, Assembled, BoundsProblem};
use crate::dgp::MomentSet;
use crate::error::{Error, Result};
use crate::model::{Block, BoundsResult, OutcomeRange};
use crate::scalar::Scalar;
use crate::solver::{Direction, Engine, SolveOutcome, SolveStatus};
use crate::weights::TargetSpec;

/// Min and max of `eta1` over an assembled system.
pub fn solve_bounds<T: Scalar>(engine: &Engine, assembled: &Assembled<T>) -> Result<BoundsResult<T>> {
    let sys = &assembled.system;
    let lo = engine.solve_lp(sys, Direction::Min)?;
    if let Some(r) = verdict(&lo)? {
        return Ok(r);
    }
    let hi = engine.solve_lp(sys, Direction::Max)?;
    if let Some(r) = verdict(&hi)? {
        return Ok(r);
    }
    let ne = sys.eq.len();
    let mut out = BoundsResult::bounded(lo.value, hi.value);
    out.diagnostics.iterations = lo.iterations + hi.iterations;
    out.diagnostics.active_lower = lo.active_inequalities(ne);
    out.diagnostics.active_upper = hi.active_inequalities(ne);
    out.argmin = Some(lo.solution);
    out.argmax = Some(hi.solution);
    Ok(out)
}

fn verdict<T: Scalar>(s: &SolveOutcome<T>) -> Result<Option<BoundsResult<T>>> {
    match s.status {
        SolveStatus::Optimal => Ok(None),
        SolveStatus::Infeasible => Ok(Some(BoundsResult::empty(s.certificate_margin))),
        SolveStatus::Unbounded => Ok(Some(BoundsResult::unbounded())),
        SolveStatus::NumericalFailure => Err(Error::Solver(format!("numerical failure after {} iterations", s.iterations))),
    }
}

/// Convex-relaxation bounds with constant envelopes (or threshold envelopes
/// when deterministic monotonicity is part of the restrictions).
pub fn cvr_bounds<T: Scalar>(problem: &BoundsProblem<T>, moments: &MomentSet<T>) -> Result<BoundsResult<T>> {
    cvr_bounds_with(&Engine::default(), problem, moments)
}

pub fn cvr_bounds_with<T: Scalar>(engine: &Engine, problem: &BoundsProblem<T>, moments: &MomentSet<T>) -> Result<BoundsResult<T>> {
    solve_bounds(engine, &assemble(problem, moments)?)
}

/// Bounds under a threshold selection model: one-dimensional unobservable,
/// partition refined at the propensities, `mD` fixed cellwise.
pub fn mst_bounds<T: Scalar>(problem: &BoundsProblem<T>, moments: &MomentSet<T>) -> Result<BoundsResult<T>> {
    Method::Mst.bounds(&Engine::default(), problem, moments)
}

/// Conditional means `(E[YD|z], E[Y(1-D)|z], p(z))` at points with mass.
fn conditional<T: Scalar>(moments: &MomentSet<T>) -> Vec<(T, T, T)> {
    (0..moments.len())
        .filter(|&z| moments.mass[z] > T::zero())
        .map(|z| {
            let f = moments.mass[z];
            (moments.yd[z] / f, moments.y0[z] / f, moments.d[z] / f)
        })
        .collect()
}

fn ate_from<T: Scalar>(y1: (T, T), y0: (T, T)) -> BoundsResult<T> {
    if y1.0 > y1.1 + T::solver_tol() || y0.0 > y0.1 + T::solver_tol() {
        return BoundsResult::empty(None);
    }
    BoundsResult::bounded(y1.0 - y0.1, y1.1 - y0.0)
}

/// Intersection bounds on the ATE over all instrument values.
pub fn manski_bounds<T: Scalar>(moments: &MomentSet<T>, outcome: OutcomeRange<T>) -> Result<BoundsResult<T>> {
    let c = conditional(moments);
    if c.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (yl, yu) = (outcome.lower, outcome.upper);
    let fold_max = |f: &dyn Fn(&(T, T, T)) -> T| c.iter().map(f).fold(T::neg_infinity(), T::max);
    let fold_min = |f: &dyn Fn(&(T, T, T)) -> T| c.iter().map(f).fold(T::infinity(), T::min);
    let one = T::one();
    let y1 = (fold_max(&|&(a, _, p)| a + yl * (one - p)), fold_min(&|&(a, _, p)| a + yu * (one - p)));
    let y0 = (fold_max(&|&(_, b, p)| b + yl * p), fold_min(&|&(_, b, p)| b + yu * p));
    Ok(ate_from(y1, y0))
}

/// ATE bounds from the largest propensity (for `E[Y1]`) and the smallest (for `E[Y0]`).
pub fn hv_bounds<T: Scalar>(moments: &MomentSet<T>, outcome: OutcomeRange<T>) -> Result<BoundsResult<T>> {
    let c = conditional(moments);
    let top = c.iter().copied().reduce(|a, b| if b.2 > a.2 { b } else { a }).ok_or(Error::EmptyDataset)?;
    let bottom = c.iter().copied().reduce(|a, b| if b.2 < a.2 { b } else { a }).ok_or(Error::EmptyDataset)?;
    let (yl, yu) = (outcome.lower, outcome.upper);
    let one = T::one();
    let y1 = (top.0 + yl * (one - top.2), top.0 + yu * (one - top.2));
    let y0 = (bottom.1 + yl * bottom.2, bottom.1 + yu * bottom.2);
    Ok(ate_from(y1, y0))
}

/// Largest coefficient count accepted by [`brute_force_bilinear`].
pub const BRUTE_FORCE_MAX_COEFFICIENTS: usize = 12;
/// Largest grid resolution accepted by [`brute_force_bilinear`].
pub const BRUTE_FORCE_MAX_RESOLUTION: usize = 41;

fn grid<T: Scalar>(lo: T, hi: T, resolution: usize) -> Vec<T> {
    if hi <= lo {
        return vec![lo];
    }
    let steps = T::lit((resolution - 1) as f64);
    (0..resolution).map(|i| lo + (hi - lo) * T::lit(i as f64) / steps).collect()
}

/// Cartesian product of per-coordinate candidate lists.
fn product<T: Copy>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for list in lists {
        out = out.into_iter().flat_map(|p| list.iter().map(move |&x| {
            let mut q = p.clone();
            q.push(x);
            q
        })).collect();
    }
    out
}

/// Grid search over the exact bilinear program on an assembled system
/// without shape rows. `m0`, `m1` and `mD` range over a grid with
/// `resolution` points per coordinate inside their envelopes, products are
/// formed exactly, and a point survives when every moment row holds within
/// `h^2` (scaled by the instrument mass), the spacing of the lattice that
/// products of grid values live on. Feasible points on the grid always
/// survive; a coarse grid may leave no survivor at all.
pub fn brute_force_bilinear<T: Scalar>(assembled: &Assembled<T>, moments: &MomentSet<T>, resolution: usize) -> Result<BoundsResult<T>> {
    let sys = &assembled.system;
    let layout = sys.layout;
    let (cells, nx, nz) = (layout.cells, layout.covariates, layout.instruments);
    let count = 2 * cells * nx + cells * nz;
    if count > BRUTE_FORCE_MAX_COEFFICIENTS || !(2..=BRUTE_FORCE_MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::InvalidSpec(format!("brute force needs at most {BRUTE_FORCE_MAX_COEFFICIENTS} coefficients and 2..={BRUTE_FORCE_MAX_RESOLUTION} grid points")));
    }
    let env = &assembled.envelope;
    let covariates = &assembled.covariates;
    let vols = assembled.partition.volumes();
    let t = &assembled.t_star;
    let h = T::one() / T::lit((resolution - 1) as f64);
    let span = (env.m0_upper.iter().chain(&env.m1_upper).fold(T::one(), |m, v| m.max(v.abs())))
        .max(env.m0_lower.iter().chain(&env.m1_lower).fold(T::one(), |m, v| m.max(v.abs())));
    let slack = |f: T| h * h * span * f * vols.iter().copied().sum::<T>();
    let zs: Vec<usize> = assembled.iv.indicators.clone();

    // mD candidates per instrument value from the D rows
    let mut md_sets: Vec<Vec<Vec<T>>> = Vec::with_capacity(nz);
    for z in 0..nz {
        let lists: Vec<Vec<T>> = (0..cells).map(|k| grid(env.md_lower[k * nz + z], env.md_upper[k * nz + z], resolution)).collect();
        let f = moments.mass[z];
        let keep: Vec<Vec<T>> = product(&lists)
            .into_iter()
            .filter(|md| !zs.contains(&z) || (md.iter().zip(&vols).map(|(&m, &v)| v * f * m).sum::<T>() - moments.d[z]).abs() <= slack(f))
            .collect();
        md_sets.push(keep);
    }
    // m0 / m1 candidates per covariate value
    let m_grid = |block: Block, x: usize| -> Vec<Vec<T>> {
        let (lo, hi) = match block {
            Block::M0 => (&env.m0_lower, &env.m0_upper),
            _ => (&env.m1_lower, &env.m1_upper),
        };
        product(&(0..cells).map(|k| grid(lo[k * nx + x], hi[k * nx + x], resolution)).collect::<Vec<_>>())
    };
    let m0_grid: Vec<Vec<Vec<T>>> = (0..nx).map(|x| m_grid(Block::M0, x)).collect();
    let m1_grid: Vec<Vec<Vec<T>>> = (0..nx).map(|x| m_grid(Block::M1, x)).collect();

    let mut best: Option<(T, T)> = None;
    let mut choice = vec![0usize; nz];
    'outer: loop {
        if md_sets.iter().any(Vec::is_empty) {
            break;
        }
        let md: Vec<&Vec<T>> = (0..nz).map(|z| &md_sets[z][choice[z]]).collect();
        // per covariate value the m0 and m1 parts separate
        let mut total: Option<(T, T)> = Some((T::zero(), T::zero()));
        for x in 0..nx {
            let zx: Vec<usize> = (0..nz).filter(|&z| covariates[z] == x).collect();
            let part = |block: Block, cands: &Vec<Vec<T>>| -> Option<(T, T)> {
                let mut r: Option<(T, T)> = None;
                for m in cands {
                    let mut ok = true;
                    let mut val = T::zero();
                    for (k, &mk) in m.iter().enumerate() {
                        val += t[layout.index(block, k, x)] * mk;
                    }
                    for &z in &zx {
                        let f = moments.mass[z];
                        let (wb, target) = if block == Block::M1 { (Block::M1D, moments.yd[z]) } else { (Block::M0D, moments.y0[z]) };
                        let mut lhs = T::zero();
                        for k in 0..cells {
                            let w = if block == Block::M1 { m[k] * md[z][k] } else { m[k] * (T::one() - md[z][k]) };
                            lhs += vols[k] * f * w;
                            val += t[layout.index(wb, k, z)] * w;
                        }
                        if zs.contains(&z) && (lhs - target).abs() > slack(f) {
                            ok = false;
                            break;
                        }
                    }
                    if ok {
                        r = Some(match r {
                            None => (val, val),
                            Some((a, b)) => (a.min(val), b.max(val)),
                        });
                    }
                }
                r
            };
            match (total, part(Block::M0, &m0_grid[x]), part(Block::M1, &m1_grid[x])) {
                (Some((a, b)), Some((c0, d0)), Some((c1, d1))) => total = Some((a + c0 + c1, b + d0 + d1)),
                _ => {
                    total = None;
                    break;
                }
            }
        }
        if let Some((a, b)) = total {
            // mD itself carries no target weight in the reported coefficients
            best = Some(match best {
                None => (a, b),
                Some((lo, hi)) => (lo.min(a), hi.max(b)),
            });
        }
        for z in 0..nz {
            choice[z] += 1;
            if choice[z] < md_sets[z].len() {
                continue 'outer;
            }
            choice[z] = 0;
        }
        break;
    }
    match best {
        Some((lo, hi)) => Ok(BoundsResult::bounded(lo, hi)),
        None => Err(Error::NoGridSurvivor(resolution)),
    }
}

/// Bounding method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Manski,
    Hv,
    Mst,
    Cvr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Manski, Method::Hv, Method::Mst, Method::Cvr];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "manski" => Ok(Method::Manski),
            "hv" => Ok(Method::Hv),
            "mst" => Ok(Method::Mst),
            "cvr" => Ok(Method::Cvr),
            other => Err(Error::Parse(format!("unknown method `{other}` (manski, hv, mst, cvr)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Manski => "manski",
            Method::Hv => "hv",
            Method::Mst => "mst",
            Method::Cvr => "cvr",
        }
    }

    /// Runs the method. Manski and HV cover the ATE only.
    pub fn bounds<T: Scalar>(self, engine: &Engine, problem: &BoundsProblem<T>, moments: &MomentSet<T>) -> Result<BoundsResult<T>> {
        let ate_only = || {
            if problem.target == TargetSpec::Ate && problem.restrictions.is_none() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{} bounds cover the unrestricted ATE only", self.name())))
            }
        };
        match self {
            Method::Manski => {
                ate_only()?;
                manski_bounds(moments, problem.outcome)
            }
            Method::Hv => {
                ate_only()?;
                hv_bounds(moments, problem.outcome)
            }
            Method::Mst => {
                let mut p = problem.clone();
                p.restrictions.deterministic_monotonicity = true;
                p.v_dim = 1;
                cvr_bounds_with(engine, &p, moments)
            }
            Method::Cvr => cvr_bounds_with(engine, problem, moments),
        }
    }
}

/// Whether a target has weights that vary with the unobservable.
pub fn v_dependent<T: Scalar>(target: &TargetSpec<T>) -> bool {
    matches!(target, TargetSpec::GeneralizedLate { .. })
}
