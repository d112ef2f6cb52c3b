//! Builds the linear system over the spline coefficients: the target row,
//! the moment equalities, pointwise McCormick envelopes, box bounds and
//! optional shape restrictions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dgp::{Dataset, MomentSet};
use crate::error::{Error, Result};
use crate::model::{Block, BlockLayout, ConstraintSystem, EnvelopeBounds, InstrumentSpace, LinearRows, OutcomeRange, VPartition};
use crate::scalar::Scalar;
use crate::weights::{target_coefficients, weights_for, TargetSpec, WeightSpec};

/// Indicators `1{Z=z}` for the instrument values that carry mass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IvLikeSet {
    pub support: usize,
    pub indicators: Vec<usize>,
}

impl IvLikeSet {
    pub fn full(support: usize) -> Self {
        Self { support, indicators: (0..support).collect() }
    }

    /// Drops points without mass, with a warning.
    pub fn from_moments<T: Scalar>(moments: &MomentSet<T>) -> Self {
        let mut indicators = Vec::new();
        for (z, &f) in moments.mass.iter().enumerate() {
            if f > T::zero() {
                indicators.push(z);
            } else {
                log::warn!("instrument value {z} has no mass; its moment rows are dropped");
            }
        }
        Self { support: moments.mass.len(), indicators }
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    /// Values of the `i`-th function on the support.
    pub fn function<T: Scalar>(&self, i: usize) -> Vec<T> {
        let mut s = vec![T::zero(); self.support];
        s[self.indicators[i]] = T::one();
        s
    }
}

/// Shape restrictions. `r1` is pointwise MTR, `r2` is MTS, `r3` both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct RestrictionSet {
    pub mtr: bool,
    pub mtr_at_mean: bool,
    pub mts: bool,
    pub stochastic_monotonicity: bool,
    pub deterministic_monotonicity: bool,
}

impl RestrictionSet {
    pub const NONE: Self = Self { mtr: false, mtr_at_mean: false, mts: false, stochastic_monotonicity: false, deterministic_monotonicity: false };
    pub const R1: Self = Self { mtr: true, ..Self::NONE };
    pub const R2: Self = Self { mts: true, ..Self::NONE };
    pub const R3: Self = Self { mtr: true, mts: true, ..Self::NONE };

    /// `none`, `r1`, `r2`, `r3`, or a comma list of
    /// `mtr`, `mtr_mean`, `mts`, `stochastic`, `deterministic`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "none" => {}
                "r1" | "mtr" => out.mtr = true,
                "r2" | "mts" => out.mts = true,
                "r3" => {
                    out.mtr = true;
                    out.mts = true;
                }
                "mtr_mean" => out.mtr_at_mean = true,
                "stochastic" => out.stochastic_monotonicity = true,
                "deterministic" => out.deterministic_monotonicity = true,
                other => return Err(Error::Parse(format!("unknown restriction `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

impl fmt::Display for RestrictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = Self { mtr: false, mts: false, ..*self };
        let mut parts: Vec<&str> = Vec::new();
        match (self.mtr, self.mts) {
            (true, true) => parts.push("r3"),
            (true, false) => parts.push("r1"),
            (false, true) => parts.push("r2"),
            _ => {}
        }
        if base.mtr_at_mean {
            parts.push("mtr_mean");
        }
        if base.stochastic_monotonicity {
            parts.push("stochastic");
        }
        if base.deterministic_monotonicity {
            parts.push("deterministic");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Knots `{0,1}`, the propensity values when given, the weight
/// discontinuities and any requested extras, on `dim` axes.
pub fn build_partition<T: Scalar>(
    dim: usize,
    weights: &WeightSpec<T>,
    propensities: Option<&[T]>,
    refinement: &[T],
) -> Result<VPartition<T>> {
    let mut knots: Vec<T> = weights.v_discontinuities.clone();
    if let Some(p) = propensities {
        knots.extend_from_slice(p);
    }
    knots.extend_from_slice(refinement);
    VPartition::from_knots(dim, &knots)
}

/// Target row `eta1 - T*'eta = 0`, then per component (YD, Y(1-D), D) and per
/// IV-like function `sum_k vol F(z) block[k,z] = E[component s]`.
pub fn assemble_equalities<T: Scalar>(
    layout: &BlockLayout,
    partition: &VPartition<T>,
    iv: &IvLikeSet,
    moments: &MomentSet<T>,
    t_star: &[T],
) -> Result<LinearRows<T>> {
    let n = layout.len();
    if t_star.len() != n || moments.len() != layout.instruments || iv.support != layout.instruments {
        return Err(Error::Dimension("target coefficients, moments and layout disagree".into()));
    }
    let mut rows = LinearRows::new(n);
    let mut first: Vec<T> = t_star.iter().map(|&t| -t).collect();
    first[0] = T::one();
    rows.push_dense(&first, T::zero(), "target");
    let vols = partition.volumes();
    let parts: [(Block, &[T], &str); 3] = [(Block::M1D, &moments.yd, "yd"), (Block::M0D, &moments.y0, "y0"), (Block::MD, &moments.d, "d")];
    for (block, rhs, name) in parts {
        for &z in &iv.indicators {
            let f = moments.mass[z];
            let entries: Vec<(usize, T)> = vols.iter().enumerate().map(|(k, &v)| (layout.index(block, k, z), v * f)).collect();
            rows.push_sparse(&entries, rhs[z], format!("{name}[{z}]"));
        }
    }
    Ok(rows)
}

/// Box bounds: `eta1` free, `m0`/`m1` and `mD` from the envelope, the product
/// blocks within the range their factors allow.
pub fn box_bounds<T: Scalar>(env: &EnvelopeBounds<T>, outcome: OutcomeRange<T>) -> (Vec<T>, Vec<T>) {
    let layout = env.layout;
    let n = layout.len();
    let mut lower = vec![T::neg_infinity(); n];
    let mut upper = vec![T::infinity(); n];
    let pairs: [(Block, &[T], &[T]); 3] = [(Block::M0, &env.m0_lower, &env.m0_upper), (Block::M1, &env.m1_lower, &env.m1_upper), (Block::MD, &env.md_lower, &env.md_upper)];
    for (block, lo, hi) in pairs {
        for (i, j) in layout.block_range(block).enumerate() {
            lower[j] = lo[i];
            upper[j] = hi[i];
        }
    }
    let (plo, phi) = (outcome.lower.min(T::zero()), outcome.upper.max(T::zero()));
    for block in [Block::M0D, Block::M1D] {
        for j in layout.block_range(block) {
            lower[j] = plo;
            upper[j] = phi;
        }
    }
    (lower, upper)
}

/// Appends the four envelope rows of `w = x y` for `x in [xl,xu]`, `y in [yl,yu]`,
/// where `y = y0 + ys * eta[iy]`.
#[allow(clippy::too_many_arguments)]
fn mccormick<T: Scalar>(rows: &mut LinearRows<T>, iw: usize, ix: usize, iy: usize, y0: T, ys: T, (xl, xu): (T, T), (yl, yu): (T, T), name: &str) {
    // w >= xa y + ya x - xa ya  (sense +1), w <= ... (sense -1)
    let lines = [(xl, yl, T::one()), (xu, yu, T::one()), (xu, yl, -T::one()), (xl, yu, -T::one())];
    for (i, (xa, ya, sense)) in lines.into_iter().enumerate() {
        // w - xa (y0 + ys eta_y) - ya x + xa ya, compared with 0
        let mut e = vec![(iw, T::one()), (ix, -ya), (iy, -xa * ys)];
        let konst = -xa * y0 + xa * ya;
        // sense * (a'eta + konst) >= 0  <=>  -sense a'eta <= sense konst
        for (_, c) in e.iter_mut() {
            *c = -sense * *c;
        }
        rows.push_sparse(&e, sense * konst, format!("{name}.{i}"));
    }
}

/// Pointwise envelopes for `m0D = m0 (1 - mD)` and `m1D = m1 mD` per cell and
/// instrument value.
pub fn assemble_mccormick<T: Scalar>(layout: &BlockLayout, env: &EnvelopeBounds<T>, covariates: &[usize]) -> LinearRows<T> {
    let mut rows = LinearRows::new(layout.len());
    let (one, zero) = (T::one(), T::zero());
    for k in 0..layout.cells {
        for z in 0..layout.instruments {
            let x = covariates[z];
            let kx = k * layout.covariates + x;
            let kz = k * layout.instruments + z;
            let (dl, du) = (env.md_lower[kz], env.md_upper[kz]);
            let id = layout.index(Block::MD, k, z);
            mccormick(
                &mut rows,
                layout.index(Block::M0D, k, z),
                layout.index(Block::M0, k, x),
                id,
                one,
                -one,
                (env.m0_lower[kx], env.m0_upper[kx]),
                (one - du, one - dl),
                &format!("mc0[{k},{z}]"),
            );
            mccormick(
                &mut rows,
                layout.index(Block::M1D, k, z),
                layout.index(Block::M1, k, x),
                id,
                zero,
                one,
                (env.m1_lower[kx], env.m1_upper[kx]),
                (dl, du),
                &format!("mc1[{k},{z}]"),
            );
        }
    }
    rows
}

/// Shape-restriction rows in `<=` form.
pub fn assemble_shape<T: Scalar>(
    restrictions: &RestrictionSet,
    layout: &BlockLayout,
    partition: &VPartition<T>,
    instruments: &InstrumentSpace<T>,
    moments: &MomentSet<T>,
) -> Result<LinearRows<T>> {
    let n = layout.len();
    let mut rows = LinearRows::new(n);
    let one = T::one();
    let vols = partition.volumes();
    if restrictions.mtr {
        for k in 0..layout.cells {
            for x in 0..layout.covariates {
                rows.push_sparse(&[(layout.index(Block::M0, k, x), one), (layout.index(Block::M1, k, x), -one)], T::zero(), format!("mtr[{k},{x}]"));
            }
        }
    }
    if restrictions.mtr_at_mean {
        for x in 0..layout.covariates {
            let mut e = Vec::new();
            for (k, &v) in vols.iter().enumerate() {
                e.push((layout.index(Block::M0, k, x), v));
                e.push((layout.index(Block::M1, k, x), -v));
            }
            rows.push_sparse(&e, T::zero(), format!("mtr_mean[{x}]"));
        }
    }
    if restrictions.mts {
        let p1 = moments.prob_treated();
        let total: T = moments.mass.iter().copied().sum();
        let p0 = total - p1;
        if !(p1 > T::zero() && p0 > T::zero()) {
            return Err(Error::MissingShapeMoments("P(D=0) and P(D=1) must be positive"));
        }
        let ey1: T = moments.yd.iter().copied().sum::<T>() / p1;
        let ey0: T = moments.y0.iter().copied().sum::<T>() / p0;
        let mut upper = vec![T::zero(); n];
        let mut lower = vec![T::zero(); n];
        for (k, &v) in vols.iter().enumerate() {
            for z in 0..layout.instruments {
                let w = v * moments.mass[z];
                let x = instruments.covariates[z];
                upper[layout.index(Block::M1, k, x)] += w;
                upper[layout.index(Block::M1D, k, z)] -= w;
                lower[layout.index(Block::M0, k, x)] -= w;
                lower[layout.index(Block::M0D, k, z)] += w;
            }
        }
        rows.push_dense(&upper, ey1 * p0, "mts.treated");
        rows.push_dense(&lower, -ey0 * p1, "mts.untreated");
    }
    if restrictions.stochastic_monotonicity && !restrictions.deterministic_monotonicity {
        for (lo, hi) in covering_pairs(instruments) {
            for k in 0..layout.cells {
                rows.push_sparse(&[(layout.index(Block::MD, k, lo), one), (layout.index(Block::MD, k, hi), -one)], T::zero(), format!("mono[{k},{lo}<{hi}]"));
            }
        }
    }
    Ok(rows)
}

/// Pairs `(a, b)` with `z_a < z_b` componentwise, equal covariate, and no point in between.
fn covering_pairs<T: Scalar>(instruments: &InstrumentSpace<T>) -> Vec<(usize, usize)> {
    let v = &instruments.values;
    let le = |a: usize, b: usize| a != b && instruments.covariates[a] == instruments.covariates[b] && v[a].iter().zip(&v[b]).all(|(x, y)| x <= y) && v[a] != v[b];
    let mut out = Vec::new();
    for a in 0..v.len() {
        for b in 0..v.len() {
            if le(a, b) && !(0..v.len()).any(|c| le(a, c) && le(c, b)) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Everything needed to assemble a bounds problem apart from the moments.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsProblem<T> {
    pub instruments: InstrumentSpace<T>,
    pub target: TargetSpec<T>,
    pub restrictions: RestrictionSet,
    /// Assumed dimension of the unobservable.
    pub v_dim: usize,
    pub outcome: OutcomeRange<T>,
    pub refinement: Vec<T>,
}

impl<T: Scalar> BoundsProblem<T> {
    pub fn new(instruments: InstrumentSpace<T>, target: TargetSpec<T>, v_dim: usize) -> Self {
        Self { instruments, target, restrictions: RestrictionSet::NONE, v_dim, outcome: OutcomeRange::default(), refinement: Vec::new() }
    }

    pub fn with_restrictions(mut self, restrictions: RestrictionSet) -> Self {
        self.restrictions = restrictions;
        self
    }

    pub fn with_refinement(mut self, knots: Vec<T>) -> Self {
        self.refinement = knots;
        self
    }

    /// Threshold-model assumption: one-dimensional unobservable.
    pub fn mst(&self) -> bool {
        self.restrictions.deterministic_monotonicity
    }
}

/// An assembled system with the pieces used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembled<T> {
    pub system: ConstraintSystem<T>,
    pub partition: VPartition<T>,
    pub weights: WeightSpec<T>,
    pub iv: IvLikeSet,
    pub envelope: EnvelopeBounds<T>,
    /// Coefficients of the reported target, zero in the `eta1` slot.
    pub t_star: Vec<T>,
    /// Covariate value of each instrument point.
    pub covariates: Vec<usize>,
}

/// Coefficients of the reported target. For PRTE the observed mean
/// `E[Y] = sum_k sum_z vol F(z) (m0D + m1D)` is subtracted, which the moment
/// rows make exact on the feasible set.
pub fn reported_coefficients<T: Scalar>(
    target: &TargetSpec<T>,
    weights: &WeightSpec<T>,
    partition: &VPartition<T>,
    layout: &BlockLayout,
    masses: &[T],
    covariates: &[usize],
) -> Result<Vec<T>> {
    let mut t = target_coefficients(weights, partition, layout, masses, covariates)?;
    if let TargetSpec::Prte = target {
        for (k, v) in partition.volumes().into_iter().enumerate() {
            for (z, &f) in masses.iter().enumerate() {
                t[layout.index(Block::M0D, k, z)] -= v * f;
                t[layout.index(Block::M1D, k, z)] -= v * f;
            }
        }
    }
    Ok(t)
}

/// Full system for the given moments (population or empirical).
pub fn assemble<T: Scalar>(problem: &BoundsProblem<T>, moments: &MomentSet<T>) -> Result<Assembled<T>> {
    let inst = &problem.instruments;
    let mut v = inst.violations();
    v.extend(problem.target.violations());
    if let Some(bad) = v.first() {
        return Err(Error::InvalidSpec(bad.to_string()));
    }
    if moments.len() != inst.len() {
        return Err(Error::Dimension("moments and instrument support differ in length".into()));
    }
    if problem.outcome.lower > problem.outcome.upper {
        return Err(Error::InvalidSpec("outcome lower bound exceeds upper bound".into()));
    }
    let weights = weights_for(&problem.target, moments, inst)?;
    let mst = problem.mst();
    let dim = if mst { 1 } else { problem.v_dim.max(1) };
    let props = moments.propensities();
    let partition = build_partition(dim, &weights, mst.then_some(&props[..]), &problem.refinement)?;
    let layout = BlockLayout::new(partition.len(), inst.num_covariates(), inst.len());
    let envelope = if mst {
        EnvelopeBounds::threshold(&partition, layout, &props, problem.outcome)?
    } else {
        EnvelopeBounds::constant(layout, problem.outcome)
    };
    let t_star = reported_coefficients(&problem.target, &weights, &partition, &layout, &moments.mass, &inst.covariates)?;
    let iv = IvLikeSet::from_moments(moments);
    let mut system = ConstraintSystem::new(layout);
    system.eq = assemble_equalities(&layout, &partition, &iv, moments, &t_star)?;
    system.ineq = assemble_mccormick(&layout, &envelope, &inst.covariates);
    system.ineq.append(&assemble_shape(&problem.restrictions, &layout, &partition, inst, moments)?);
    let (lower, upper) = box_bounds(&envelope, problem.outcome);
    system.lower = lower;
    system.upper = upper;
    Ok(Assembled { system, partition, weights, iv, envelope, t_star, covariates: inst.covariates.clone() })
}

/// Observations sharing `(z, y, d)` have identical rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WPattern<T> {
    pub z: usize,
    pub y: u8,
    pub d: u8,
    pub count: usize,
    /// Equality block of `W_i`, row-major `d_eq x (d_eta + 1)`, the last column the right-hand side.
    pub eq: Vec<T>,
}

/// Sample system with its per-observation decomposition. Inequality rows are
/// the same for every observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSystem<T> {
    pub assembled: Assembled<T>,
    pub moments: MomentSet<T>,
    pub patterns: Vec<WPattern<T>>,
    pub n: usize,
}

impl<T: Scalar> SampleSystem<T> {
    pub fn system(&self) -> &ConstraintSystem<T> {
        &self.assembled.system
    }

    /// Width of a `W_i` row, `d_eta + 1`.
    pub fn width(&self) -> usize {
        self.assembled.system.cols() + 1
    }

    /// Count-weighted mean of the pattern blocks.
    pub fn mean_eq(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.patterns.first().map_or(0, |p| p.eq.len())];
        let n = T::lit(self.n as f64);
        for p in &self.patterns {
            let c = T::lit(p.count as f64) / n;
            for (o, &w) in out.iter_mut().zip(&p.eq) {
                *o += c * w;
            }
        }
        out
    }
}

/// Sample analog of [`assemble`] plus the `W_i` patterns whose mean is the
/// equality block. Weight denominators use sample moments.
pub fn assemble_sample<T: Scalar>(problem: &BoundsProblem<T>, data: &Dataset<T>) -> Result<SampleSystem<T>> {
    if data.observations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.support.len() != problem.instruments.len() {
        return Err(Error::Dimension("dataset support differs from the instrument space".into()));
    }
    let moments = MomentSet::from_dataset(data)?;
    let assembled = assemble(problem, &moments)?;
    let layout = assembled.system.layout;
    let nz = problem.instruments.len();
    let mut counts = vec![[0usize; 4]; nz];
    for o in &data.observations {
        counts[o.z][2 * o.y as usize + o.d as usize] += 1;
    }
    let mut patterns = Vec::new();
    let width = layout.len() + 1;
    for (z, c) in counts.iter().enumerate() {
        for (yd, &count) in c.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let (y, d) = ((yd / 2) as u8, (yd % 2) as u8);
            let mut single = MomentSet { mass: vec![T::zero(); nz], yd: vec![T::zero(); nz], y0: vec![T::zero(); nz], d: vec![T::zero(); nz], n: Some(1) };
            single.mass[z] = T::one();
            single.yd[z] = T::lit(f64::from(y * d));
            single.y0[z] = T::lit(f64::from(y * (1 - d)));
            single.d[z] = T::lit(f64::from(d));
            let t = reported_coefficients(&problem.target, &assembled.weights, &assembled.partition, &layout, &single.mass, &problem.instruments.covariates)?;
            let rows = assemble_equalities(&layout, &assembled.partition, &assembled.iv, &single, &t)?;
            let mut eq = Vec::with_capacity(rows.len() * width);
            for r in 0..rows.len() {
                eq.extend_from_slice(rows.row(r));
                eq.push(rows.rhs[r]);
            }
            patterns.push(WPattern { z, y, d, count, eq });
        }
    }
    Ok(SampleSystem { assembled, moments, patterns, n: data.observations.len() })
}
