//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ivbounds::assemble::{BoundsProblem, RestrictionSet};
use ivbounds::dgp::MomentSet;
use ivbounds::model::{ConstraintSystem, InstrumentSpace};
use ivbounds::solver::SolveOutcome;
use ivbounds::weights::TargetSpec;
use rand::rngs::StdRng;
use rand::Rng;

/// Objective value recovered from the multipliers alone. With
/// `g + A'l + nu = 0` the dual value is `-b'l` minus `nu_j` times the bound
/// it pushes against.
pub fn dual_value(s: &ConstraintSystem<f64>, r: &SolveOutcome<f64>) -> f64 {
    let ne = s.eq.len();
    let mut d = 0.0;
    for i in 0..ne {
        d -= r.multipliers[i] * s.eq.rhs[i];
    }
    for i in 0..s.ineq.len() {
        d -= r.multipliers[ne + i] * s.ineq.rhs[i];
    }
    for (j, &nu) in r.bound_multipliers.iter().enumerate() {
        if nu < 0.0 {
            d -= nu * s.lower[j];
        } else if nu > 0.0 {
            d -= nu * s.upper[j];
        }
    }
    d
}

/// Largest `|l_j (b_j - a_j'x)|` over inequality rows.
pub fn complementarity(s: &ConstraintSystem<f64>, r: &SolveOutcome<f64>) -> f64 {
    let ne = s.eq.len();
    (0..s.ineq.len()).map(|i| (r.multipliers[ne + i] * s.ineq.residual(i, &r.solution)).abs()).fold(0.0, f64::max)
}

/// Smallest multiplier on an inequality row (should not be negative).
pub fn min_inequality_multiplier(s: &ConstraintSystem<f64>, r: &SolveOutcome<f64>) -> f64 {
    r.multipliers[s.eq.len()..].iter().copied().fold(f64::INFINITY, f64::min)
}

/// `min over the box of (y'A) eta - y'b`; positive means `y` proves
/// that `A eta <= b` (equality part `=`) has no solution in the box.
/// Negative weights on inequality rows are reported as `-inf`.
pub fn certificate_margin(s: &ConstraintSystem<f64>, y: &[f64]) -> f64 {
    let ne = s.eq.len();
    let n = s.cols();
    let mut agg = vec![0.0; n];
    let mut rhs = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let (row, b) = if i < ne {
            (s.eq.row(i), s.eq.rhs[i])
        } else {
            if yi < -1e-12 {
                return f64::NEG_INFINITY;
            }
            (s.ineq.row(i - ne), s.ineq.rhs[i - ne])
        };
        for (a, r) in agg.iter_mut().zip(row) {
            *a += yi * r;
        }
        rhs += yi * b;
    }
    let mut lhs = 0.0;
    for (j, &g) in agg.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let bound = if g > 0.0 { s.lower[j] } else { s.upper[j] };
        if !bound.is_finite() {
            return f64::NEG_INFINITY;
        }
        lhs += g * bound;
    }
    lhs - rhs
}

/// Two instrument values, cellwise-constant truths on one axis, and the
/// exact population moments they imply.
pub struct Tiny {
    pub problem: BoundsProblem<f64>,
    pub moments: MomentSet<f64>,
    pub truth: f64,
}

fn on_grid(rng: &mut StdRng, resolution: usize) -> f64 {
    rng.random_range(0..resolution) as f64 / (resolution - 1) as f64
}

fn moments_from(mass: &[f64], vols: &[f64], m0: &[f64], m1: &[f64], md: &[Vec<f64>]) -> MomentSet<f64> {
    let mut m = MomentSet { mass: mass.to_vec(), yd: vec![0.0; 2], y0: vec![0.0; 2], d: vec![0.0; 2], n: None };
    for z in 0..2 {
        for k in 0..vols.len() {
            let w = mass[z] * vols[k];
            m.d[z] += w * md[k][z];
            m.yd[z] += w * m1[k] * md[k][z];
            m.y0[z] += w * m0[k] * (1.0 - md[k][z]);
        }
    }
    m
}

fn instruments(rng: &mut StdRng) -> (InstrumentSpace<f64>, Vec<f64>) {
    let f = rng.random_range(0.2..0.8);
    let mass = vec![f, 1.0 - f];
    (InstrumentSpace::new(vec![vec![0.0], vec![1.0]], mass.clone()), mass)
}

fn ate(vols: &[f64], m0: &[f64], m1: &[f64]) -> f64 {
    vols.iter().zip(m0.iter().zip(m1)).map(|(v, (a, b))| v * (b - a)).sum()
}

/// Unrestricted ATE instance with one or two cells; truths lie on the grid.
pub fn tiny_cvr(rng: &mut StdRng, resolution: usize) -> Tiny {
    let (inst, mass) = instruments(rng);
    let knots = if rng.random::<bool>() { vec![0.5] } else { vec![] };
    let vols = if knots.is_empty() { vec![1.0] } else { vec![0.5, 0.5] };
    let cells = vols.len();
    let m0: Vec<f64> = (0..cells).map(|_| on_grid(rng, resolution)).collect();
    let m1: Vec<f64> = (0..cells).map(|_| on_grid(rng, resolution)).collect();
    let md: Vec<Vec<f64>> = (0..cells).map(|_| (0..2).map(|_| on_grid(rng, resolution)).collect()).collect();
    let problem = BoundsProblem::new(inst, TargetSpec::Ate, 1).with_refinement(knots);
    Tiny { problem, moments: moments_from(&mass, &vols, &m0, &m1, &md), truth: ate(&vols, &m0, &m1) }
}

/// Threshold-model ATE instance: three cells cut at the two propensities.
pub fn tiny_mst(rng: &mut StdRng, resolution: usize) -> Tiny {
    let (inst, mass) = instruments(rng);
    let a = rng.random_range(0.15..0.45);
    let b = rng.random_range(0.55..0.85);
    let vols = vec![a, b - a, 1.0 - b];
    let m0: Vec<f64> = (0..3).map(|_| on_grid(rng, resolution)).collect();
    let m1: Vec<f64> = (0..3).map(|_| on_grid(rng, resolution)).collect();
    // treated when v lies below p(z)
    let md = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]];
    let r = RestrictionSet { deterministic_monotonicity: true, ..RestrictionSet::NONE };
    let problem = BoundsProblem::new(inst, TargetSpec::Ate, 1).with_restrictions(r);
    Tiny { problem, moments: moments_from(&mass, &vols, &m0, &m1, &md), truth: ate(&vols, &m0, &m1) }
}
