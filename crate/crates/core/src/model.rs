//! Domain types shared across the pipeline.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weights::TargetSpec;

/// A single failed invariant, reported rather than thrown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

/// Collects every invariant violation of the three specifications.
pub fn validate_spec<T: Scalar>(
    dgp: &DgpSpec<T>,
    partition: &VPartition<T>,
    target: &TargetSpec<T>,
) -> ValidationReport {
    let mut violations = dgp.violations();
    violations.extend(partition.violations());
    violations.extend(target.violations());
    if let TargetSpec::Prte = target {
        if dgp.instruments.policy_probabilities.is_none() {
            violations.push(Violation::new("target", "PRTE requires policy probabilities"));
        }
    }
    ValidationReport { violations }
}

/// Prints a probability sum without float noise, e.g. `1.1` rather than `1.1000000000000001`.
pub(crate) fn tidy(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Bounds on the outcome support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutcomeRange<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Default for OutcomeRange<T> {
    fn default() -> Self {
        Self { lower: T::zero(), upper: T::one() }
    }
}

impl<T: Scalar> OutcomeRange<T> {
    pub fn width(&self) -> T {
        self.upper - self.lower
    }
}

/// Product partition of `[0,1]^K`. The first interval on each axis is closed,
/// the rest are half-open on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct VPartition<T> {
    knots: Vec<Vec<T>>,
}

/// One cell of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub index: usize,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Cell<T> {
    pub fn volume(&self) -> T {
        self.lower.iter().zip(&self.upper).fold(T::one(), |acc, (&a, &b)| acc * (b - a))
    }

    pub fn midpoint(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lower.iter().zip(&self.upper).map(|(&a, &b)| half * (a + b)).collect()
    }
}

impl<T: Scalar> VPartition<T> {
    pub fn new(knots: Vec<Vec<T>>) -> Result<Self> {
        let p = Self { knots };
        let v = p.violations();
        if v.is_empty() {
            Ok(p)
        } else {
            Err(Error::InvalidSpec(join(&v)))
        }
    }

    /// Keeps the knots as given; call [`VPartition::violations`] to inspect them.
    pub fn unchecked(knots: Vec<Vec<T>>) -> Self {
        Self { knots }
    }

    /// Single cell `[0,1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { knots: vec![vec![T::zero(), T::one()]; dim] }
    }

    /// Same knot set on every axis. Endpoints are added, the rest sorted and deduplicated.
    pub fn from_knots(dim: usize, knots: &[T]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("partition dimension must be at least 1".into()));
        }
        let axis = merge_knots(knots)?;
        Ok(Self { knots: vec![axis; dim] })
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.knots.is_empty() {
            out.push(Violation::new("partition", "dimension must be at least 1"));
        }
        for (axis, ks) in self.knots.iter().enumerate() {
            let field = format!("partition.axis{axis}");
            if ks.len() < 2 {
                out.push(Violation::new(&field, "needs at least the knots 0 and 1"));
                continue;
            }
            if ks.iter().any(|k| !k.is_finite() || *k < T::zero() || *k > T::one()) {
                out.push(Violation::new(&field, "knot outside [0,1]"));
            }
            if ks.windows(2).any(|w| w[1] <= w[0]) {
                out.push(Violation::new(&field, "knots not increasing"));
            }
            if ks[0] != T::zero() || ks[ks.len() - 1] != T::one() {
                out.push(Violation::new(&field, "knots must start at 0 and end at 1"));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self, axis: usize) -> &[T] {
        &self.knots[axis]
    }

    pub fn intervals(&self, axis: usize) -> usize {
        self.knots[axis].len() - 1
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        (0..self.dim()).map(|a| self.intervals(a)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis interval indices of a cell; axis 0 varies slowest.
    pub fn axis_indices(&self, mut index: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let n = self.intervals(axis);
            idx[axis] = index % n;
            index /= n;
        }
        idx
    }

    pub fn cell(&self, index: usize) -> Cell<T> {
        let idx = self.axis_indices(index);
        let lower = idx.iter().enumerate().map(|(a, &i)| self.knots[a][i]).collect();
        let upper = idx.iter().enumerate().map(|(a, &i)| self.knots[a][i + 1]).collect();
        Cell { index, lower, upper }
    }

    pub fn cells(&self) -> Vec<Cell<T>> {
        (0..self.len()).map(|k| self.cell(k)).collect()
    }

    pub fn volumes(&self) -> Vec<T> {
        self.cells().iter().map(Cell::volume).collect()
    }

    /// Cell containing `v`, or `None` when `v` lies outside the unit cube.
    pub fn locate(&self, v: &[T]) -> Option<usize> {
        if v.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for (axis, &x) in v.iter().enumerate() {
            let ks = &self.knots[axis];
            if x < ks[0] || x > ks[ks.len() - 1] {
                return None;
            }
            let i = (0..ks.len() - 1).find(|&i| x <= ks[i + 1])?;
            index = index * self.intervals(axis) + i;
        }
        Some(index)
    }

    pub fn has_knot(&self, axis: usize, x: T) -> bool {
        self.knots[axis].iter().any(|&k| (k - x).abs() <= T::knot_tol())
    }

    /// Adds the same extra knots on every axis.
    pub fn refine(&self, extra: &[T]) -> Result<Self> {
        let knots = self
            .knots
            .iter()
            .map(|ks| {
                let mut all = ks.clone();
                all.extend_from_slice(extra);
                merge_knots(&all)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { knots })
    }
}

fn merge_knots<T: Scalar>(knots: &[T]) -> Result<Vec<T>> {
    if let Some(bad) = knots.iter().find(|k| !k.is_finite() || **k < T::zero() || **k > T::one()) {
        return Err(Error::InvalidSpec(format!("knot {bad} outside [0,1]")));
    }
    let mut inner: Vec<T> = knots.iter().copied().filter(|&k| k > T::knot_tol() && k < T::one() - T::knot_tol()).collect();
    inner.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    inner.dedup_by(|a, b| (*a - *b).abs() <= T::knot_tol());
    let mut axis = Vec::with_capacity(inner.len() + 2);
    axis.push(T::zero());
    axis.extend(inner);
    axis.push(T::one());
    Ok(axis)
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Finite instrument support with its law and an optional counterfactual law.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentSpace<T> {
    pub values: Vec<Vec<T>>,
    pub probabilities: Vec<T>,
    pub policy_probabilities: Option<Vec<T>>,
    /// Discrete covariate value attached to each support point; all zero without covariates.
    pub covariates: Vec<usize>,
}

impl<T: Scalar> InstrumentSpace<T> {
    pub fn new(values: Vec<Vec<T>>, probabilities: Vec<T>) -> Self {
        let covariates = vec![0; values.len()];
        Self { values, probabilities, policy_probabilities: None, covariates }
    }

    pub fn with_policy(mut self, policy: Vec<T>) -> Self {
        self.policy_probabilities = Some(policy);
        self
    }

    pub fn with_covariates(mut self, covariates: Vec<usize>) -> Self {
        self.covariates = covariates;
        self
    }

    /// Independent product of two one-dimensional laws; the first factor varies slowest.
    pub fn product(first: (&[T], &[T]), second: (&[T], &[T])) -> Self {
        let mut values = Vec::new();
        let mut probs = Vec::new();
        for (&a, &pa) in first.0.iter().zip(first.1) {
            for (&b, &pb) in second.0.iter().zip(second.1) {
                values.push(vec![a, b]);
                probs.push(pa * pb);
            }
        }
        Self::new(values, probs)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn components(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.iter().max().map_or(1, |m| m + 1)
    }

    pub fn find(&self, point: &[T]) -> Option<usize> {
        self.values.iter().position(|v| {
            v.len() == point.len() && v.iter().zip(point).all(|(&a, &b)| (a - b).abs() <= T::knot_tol())
        })
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.values.is_empty() {
            out.push(Violation::new("instruments", "support is empty"));
            return out;
        }
        let comps = self.components();
        if comps == 0 || self.values.iter().any(|v| v.len() != comps) {
            out.push(Violation::new("instruments.values", "points must share one component count"));
        }
        if self.values.iter().flatten().any(|x| !x.is_finite()) {
            out.push(Violation::new("instruments.values", "non-finite instrument value"));
        }
        if self.covariates.len() != self.values.len() {
            out.push(Violation::new("instruments.covariates", "one covariate index per support point required"));
        }
        check_mass(&mut out, "instruments.probabilities", &self.probabilities, self.values.len());
        if let Some(policy) = &self.policy_probabilities {
            check_mass(&mut out, "instruments.policy_probabilities", policy, self.values.len());
            if policy.len() == self.probabilities.len()
                && policy.iter().zip(&self.probabilities).any(|(&q, &p)| q > T::zero() && p <= T::zero())
            {
                out.push(Violation::new(
                    "instruments.policy_probabilities",
                    "policy puts mass where the instrument law has none",
                ));
            }
        }
        out
    }
}

fn check_mass<T: Scalar>(out: &mut Vec<Violation>, field: &str, probs: &[T], n: usize) {
    if probs.len() != n {
        out.push(Violation::new(field, format!("expected {n} probabilities, got {}", probs.len())));
        return;
    }
    if probs.iter().any(|p| !p.is_finite() || *p < T::zero()) {
        out.push(Violation::new(field, "probabilities must be nonnegative"));
    }
    let total: T = probs.iter().copied().sum();
    if (total - T::one()).abs() > T::knot_tol() {
        out.push(Violation::new(field, format!("mass sums to {}", tidy(total.to_f64_lossy()))));
    }
}

/// The five function blocks of the coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Block {
    M0,
    M1,
    MD,
    M0D,
    M1D,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::M0, Block::M1, Block::MD, Block::M0D, Block::M1D];

    pub fn name(self) -> &'static str {
        match self {
            Block::M0 => "m0",
            Block::M1 => "m1",
            Block::MD => "mD",
            Block::M0D => "m0D",
            Block::M1D => "m1D",
        }
    }

    /// Whether the block is indexed by covariate (`m0`, `m1`) rather than instrument value.
    pub fn by_covariate(self) -> bool {
        matches!(self, Block::M0 | Block::M1)
    }
}

/// Position map for `eta = (eta1, m0, m1, mD, m0D, m1D)`. Within a block the
/// cell index varies slowest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockLayout {
    pub cells: usize,
    pub covariates: usize,
    pub instruments: usize,
}

impl BlockLayout {
    pub fn new(cells: usize, covariates: usize, instruments: usize) -> Self {
        Self { cells, covariates, instruments }
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.cells * self.covariates + 3 * self.cells * self.instruments
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self, block: Block) -> usize {
        if block.by_covariate() {
            self.covariates
        } else {
            self.instruments
        }
    }

    pub fn offset(&self, block: Block) -> usize {
        let cx = self.cells * self.covariates;
        let cz = self.cells * self.instruments;
        match block {
            Block::M0 => 1,
            Block::M1 => 1 + cx,
            Block::MD => 1 + 2 * cx,
            Block::M0D => 1 + 2 * cx + cz,
            Block::M1D => 1 + 2 * cx + 2 * cz,
        }
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let start = self.offset(block);
        start..start + self.cells * self.values(block)
    }

    pub fn index(&self, block: Block, cell: usize, value: usize) -> usize {
        debug_assert!(cell < self.cells && value < self.values(block));
        self.offset(block) + cell * self.values(block) + value
    }

    /// Inverse of [`BlockLayout::index`]; `None` for the `eta1` slot or out of range.
    pub fn locate(&self, index: usize) -> Option<(Block, usize, usize)> {
        Block::ALL.iter().find_map(|&b| {
            let r = self.block_range(b);
            r.contains(&index).then(|| {
                let off = index - r.start;
                (b, off / self.values(b), off % self.values(b))
            })
        })
    }

    pub fn label(&self, index: usize) -> String {
        match self.locate(index) {
            Some((b, k, v)) => format!("{}_{}_{}", b.name(), k, v),
            None => "eta1".to_string(),
        }
    }
}

/// Coefficient vector on the constant-spline basis.
#[derive(Clone, Debug, PartialEq)]
pub struct MtrCoefficients<T> {
    pub layout: BlockLayout,
    pub eta: Vec<T>,
}

impl<T: Scalar> MtrCoefficients<T> {
    pub fn zeros(layout: BlockLayout) -> Self {
        Self { layout, eta: vec![T::zero(); layout.len()] }
    }

    pub fn eta1(&self) -> T {
        self.eta[0]
    }

    pub fn eta2(&self) -> &[T] {
        &self.eta[1..]
    }

    pub fn get(&self, block: Block, cell: usize, value: usize) -> T {
        self.eta[self.layout.index(block, cell, value)]
    }

    pub fn set(&mut self, block: Block, cell: usize, value: usize, x: T) {
        let i = self.layout.index(block, cell, value);
        self.eta[i] = x;
    }
}

/// Cellwise constant envelopes for `m0`, `m1` (per covariate) and `mD` (per instrument value).
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeBounds<T> {
    pub layout: BlockLayout,
    pub m0_lower: Vec<T>,
    pub m0_upper: Vec<T>,
    pub m1_lower: Vec<T>,
    pub m1_upper: Vec<T>,
    pub md_lower: Vec<T>,
    pub md_upper: Vec<T>,
}

impl<T: Scalar> EnvelopeBounds<T> {
    /// `m_d` within the outcome range and `mD` within `[0,1]` everywhere.
    pub fn constant(layout: BlockLayout, outcome: OutcomeRange<T>) -> Self {
        let cx = layout.cells * layout.covariates;
        let cz = layout.cells * layout.instruments;
        Self {
            layout,
            m0_lower: vec![outcome.lower; cx],
            m0_upper: vec![outcome.upper; cx],
            m1_lower: vec![outcome.lower; cx],
            m1_upper: vec![outcome.upper; cx],
            md_lower: vec![T::zero(); cz],
            md_upper: vec![T::one(); cz],
        }
    }

    /// Threshold envelopes: `mD = 1[p(z) >= v]` on a partition whose first-axis
    /// knots include every propensity value.
    pub fn threshold(
        partition: &VPartition<T>,
        layout: BlockLayout,
        propensities: &[T],
        outcome: OutcomeRange<T>,
    ) -> Result<Self> {
        if propensities.len() != layout.instruments {
            return Err(Error::Dimension("one propensity per instrument value required".into()));
        }
        let mut env = Self::constant(layout, outcome);
        for cell in partition.cells() {
            let (lo, hi) = (cell.lower[0], cell.upper[0]);
            for (z, &p) in propensities.iter().enumerate() {
                let fixed = if p >= hi - T::knot_tol() {
                    T::one()
                } else if p <= lo + T::knot_tol() {
                    T::zero()
                } else {
                    return Err(Error::InvalidSpec(format!(
                        "propensity {p} lies inside cell ({lo}, {hi}]"
                    )));
                };
                env.md_lower[cell.index * layout.instruments + z] = fixed;
                env.md_upper[cell.index * layout.instruments + z] = fixed;
            }
        }
        Ok(env)
    }

    pub fn violations(&self, outcome: OutcomeRange<T>) -> Vec<Violation> {
        let mut out = Vec::new();
        let pairs: [(&str, &Vec<T>, &Vec<T>, T, T); 3] = [
            ("m0", &self.m0_lower, &self.m0_upper, outcome.lower, outcome.upper),
            ("m1", &self.m1_lower, &self.m1_upper, outcome.lower, outcome.upper),
            ("mD", &self.md_lower, &self.md_upper, T::zero(), T::one()),
        ];
        for (name, lo, hi, a, b) in pairs {
            if lo.iter().zip(hi).any(|(l, u)| l > u) {
                out.push(Violation::new(format!("envelope.{name}"), "lower exceeds upper"));
            }
            if lo.iter().chain(hi.iter()).any(|&x| x < a || x > b) {
                out.push(Violation::new(format!("envelope.{name}"), "bound outside the admissible range"));
            }
        }
        out
    }
}

/// Dense rows `A x (= or <=) b` with a label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRows<T> {
    pub cols: usize,
    pub coeffs: Vec<T>,
    pub rhs: Vec<T>,
    pub names: Vec<String>,
}

impl<T: Scalar> LinearRows<T> {
    pub fn new(cols: usize) -> Self {
        Self { cols, coeffs: Vec::new(), rhs: Vec::new(), names: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.coeffs[i * self.cols..(i + 1) * self.cols]
    }

    pub fn push_dense(&mut self, row: &[T], rhs: T, name: impl Into<String>) {
        assert_eq!(row.len(), self.cols, "row length");
        self.coeffs.extend_from_slice(row);
        self.rhs.push(rhs);
        self.names.push(name.into());
    }

    pub fn push_sparse(&mut self, entries: &[(usize, T)], rhs: T, name: impl Into<String>) {
        let start = self.coeffs.len();
        self.coeffs.resize(start + self.cols, T::zero());
        for &(j, a) in entries {
            self.coeffs[start + j] += a;
        }
        self.rhs.push(rhs);
        self.names.push(name.into());
    }

    pub fn append(&mut self, other: &LinearRows<T>) {
        assert_eq!(self.cols, other.cols, "column count");
        self.coeffs.extend_from_slice(&other.coeffs);
        self.rhs.extend_from_slice(&other.rhs);
        self.names.extend(other.names.iter().cloned());
    }

    /// `a_i' x - b_i`.
    pub fn residual(&self, i: usize, x: &[T]) -> T {
        crate::scalar::dot(self.row(i), x) - self.rhs[i]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().chain(&self.rhs).all(|x| x.is_finite())
    }
}

/// Feasible polytope: equality rows, `<=` rows and a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem<T> {
    pub layout: BlockLayout,
    pub eq: LinearRows<T>,
    pub ineq: LinearRows<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> ConstraintSystem<T> {
    pub fn new(layout: BlockLayout) -> Self {
        let n = layout.len();
        Self {
            layout,
            eq: LinearRows::new(n),
            ineq: LinearRows::new(n),
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn cols(&self) -> usize {
        self.lower.len()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.cols();
        if self.eq.cols != n || self.ineq.cols != n || self.upper.len() != n || n != self.layout.len() {
            out.push(Violation::new("system", "column counts disagree with the layout"));
        }
        if !self.eq.is_finite() || !self.ineq.is_finite() {
            out.push(Violation::new("system", "non-finite row entry"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            out.push(Violation::new("system.box", "lower bound exceeds upper bound"));
        }
        out
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for i in 0..self.eq.len() {
            worst = worst.max(self.eq.residual(i, x).abs());
        }
        for i in 0..self.ineq.len() {
            worst = worst.max(self.ineq.residual(i, x));
        }
        for ((&xi, &l), &u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(l - xi).max(xi - u);
        }
        worst
    }

    /// Writes the system in CPLEX LP format with objective `sense e1'eta`.
    pub fn write_lp<W: Write>(&self, mut w: W, maximize: bool) -> std::io::Result<()> {
        let name = |j: usize| self.layout.label(j);
        writeln!(w, "\\ columns: {}, equality rows: {}, inequality rows: {}", self.cols(), self.eq.len(), self.ineq.len())?;
        writeln!(w, "{}", if maximize { "Maximize" } else { "Minimize" })?;
        writeln!(w, " obj: {}", name(0))?;
        writeln!(w, "Subject To")?;
        let emit = |rows: &LinearRows<T>, sense: &str, w: &mut W| -> std::io::Result<()> {
            for i in 0..rows.len() {
                write!(w, " {}:", sanitize(&rows.names[i], i))?;
                let mut any = false;
                for (j, &a) in rows.row(i).iter().enumerate() {
                    if a != T::zero() {
                        let a = a.to_f64_lossy();
                        write!(w, " {} {:?} {}", if a < 0.0 { "-" } else { "+" }, a.abs(), name(j))?;
                        any = true;
                    }
                }
                if !any {
                    write!(w, " 0 {}", name(0))?;
                }
                writeln!(w, " {sense} {:?}", rows.rhs[i].to_f64_lossy())?;
            }
            Ok(())
        };
        emit(&self.eq, "=", &mut w)?;
        emit(&self.ineq, "<=", &mut w)?;
        writeln!(w, "Bounds")?;
        for j in 0..self.cols() {
            let (l, u) = (self.lower[j], self.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                (false, false) => writeln!(w, " {} free", name(j))?,
                (true, true) => writeln!(w, " {:?} <= {} <= {:?}", l.to_f64_lossy(), name(j), u.to_f64_lossy())?,
                (true, false) => writeln!(w, " {} >= {:?}", name(j), l.to_f64_lossy())?,
                (false, true) => writeln!(w, " -inf <= {} <= {:?}", name(j), u.to_f64_lossy())?,
            }
        }
        writeln!(w, "End")
    }
}

fn sanitize(name: &str, i: usize) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    format!("r{i}_{s}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundsStatus {
    Bounded,
    Empty,
    Unbounded,
}

impl BoundsStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundsStatus::Bounded => "bounded",
            BoundsStatus::Empty => "empty",
            BoundsStatus::Unbounded => "unbounded",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics<T> {
    pub iterations: usize,
    /// Inequality rows binding at the minimizer and at the maximizer.
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    /// Margin of the infeasibility certificate when the set is empty.
    pub certificate_margin: Option<T>,
}

/// Interval `[lower, upper]` for a target, or an emptiness verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsResult<T> {
    pub status: BoundsStatus,
    pub lower: Option<T>,
    pub upper: Option<T>,
    #[serde(skip)]
    pub argmin: Option<Vec<T>>,
    #[serde(skip)]
    pub argmax: Option<Vec<T>>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> BoundsResult<T> {
    pub fn bounded(lower: T, upper: T) -> Self {
        Self {
            status: BoundsStatus::Bounded,
            lower: Some(lower),
            upper: Some(upper),
            argmin: None,
            argmax: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn empty(margin: Option<T>) -> Self {
        Self {
            status: BoundsStatus::Empty,
            lower: None,
            upper: None,
            argmin: None,
            argmax: None,
            diagnostics: Diagnostics { certificate_margin: margin, ..Diagnostics::default() },
        }
    }

    pub fn unbounded() -> Self {
        Self { status: BoundsStatus::Unbounded, ..Self::empty(None) }
    }

    pub fn is_empty(&self) -> bool {
        self.status == BoundsStatus::Empty
    }

    /// `(lower, upper)` when bounded.
    pub fn interval(&self) -> Option<(T, T)> {
        match (self.status, self.lower, self.upper) {
            (BoundsStatus::Bounded, Some(l), Some(u)) => Some((l, u)),
            _ => None,
        }
    }

    pub fn width(&self) -> Option<T> {
        self.interval().map(|(l, u)| u - l)
    }

    /// Adds a constant to both endpoints.
    pub fn shifted(mut self, by: T) -> Self {
        self.lower = self.lower.map(|x| x + by);
        self.upper = self.upper.map(|x| x + by);
        self
    }
}
