//! Confidence intervals for the bounds by regularized support-function
//! estimation, and a Monte Carlo harness for their coverage.
//!
//! For each side the sample program is solved with a small ridge penalty
//! `mu |eta|^2`, which makes the optimizer unique. The variance of the
//! Lagrangian at that optimizer gives the standard error, and the ridge bias
//! is undone by `mu |eta_out|^2`, where `eta_out` bounds the coordinates of
//! every near-optimal point.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::{assemble, assemble_sample, BoundsProblem, SampleSystem};
use crate::dgp::{derive_seed, population_moments, sample, DgpSpec};
use crate::error::{Error, Result};
use crate::estimators::solve_bounds;
use crate::normal;
use crate::scalar::{dot, Scalar};
use crate::solver::{Direction, Engine, ExtraRow, SolveOutcome, SolveStatus};

/// Settings shared by every replication.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOptions<T> {
    /// Level: the interval has nominal coverage `1 - alpha`; must lie in `(0, 0.5)`.
    pub alpha: T,
    /// Fixed `(mu_lower, mu_upper)` instead of the data-driven rule. Zero turns
    /// regularization and bias correction off.
    pub mu_override: Option<(T, T)>,
}

impl<T: Scalar> Default for InferenceOptions<T> {
    fn default() -> Self {
        Self { alpha: T::lit(0.05), mu_override: None }
    }
}

/// Tuning values for both sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tuning<T> {
    pub mu_lower: T,
    pub mu_upper: T,
    /// Scale estimates before the `sqrt(log n / n)` factor.
    pub scale_lower: T,
    pub scale_upper: T,
    /// Sides where the scale estimate was zero and `sqrt(log n / n)` was used.
    pub fallback_lower: bool,
    pub fallback_upper: bool,
}

/// Point estimates, corrections and the interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceResult<T> {
    pub n: usize,
    pub alpha: T,
    /// Unregularized sample bounds.
    pub beta_lower_hat: T,
    pub beta_upper_hat: T,
    /// Regularized values.
    pub reg_lower: T,
    pub reg_upper: T,
    pub eta_out_lower: Vec<T>,
    pub eta_out_upper: Vec<T>,
    /// Bias-corrected estimates.
    pub beta_out_lower: T,
    pub beta_out_upper: T,
    pub sigma_lower: T,
    pub sigma_upper: T,
    pub critical_value: T,
    pub ci: (T, T),
    pub tuning: Tuning<T>,
}

impl<T: Scalar> InferenceResult<T> {
    pub fn width(&self) -> T {
        self.ci.1 - self.ci.0
    }

    /// Whether the interval contains `[lower, upper]` entirely.
    pub fn covers(&self, lower: T, upper: T) -> bool {
        self.ci.0 <= lower && self.ci.1 >= upper
    }
}

fn sqrt_log_ratio<T: Scalar>(n: usize) -> T {
    let nf = n as f64;
    T::lit((nf.ln() / nf).sqrt())
}

fn require_optimal<T: Scalar>(s: SolveOutcome<T>, what: &str) -> Result<SolveOutcome<T>> {
    match s.status {
        SolveStatus::Optimal => Ok(s),
        st => Err(Error::Inference(format!("{what}: {st:?}"))),
    }
}

/// `lambda' W_i` for one pattern, over the equality rows.
fn lambda_w<T: Scalar>(lambda_eq: &[T], block: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for (j, &l) in lambda_eq.iter().enumerate() {
        if l != T::zero() {
            for (o, &w) in out.iter_mut().zip(&block[j * width..(j + 1) * width]) {
                *o += l * w;
            }
        }
    }
    out
}

/// `tr var(lambda' W_i)` over the sample, with inequality rows contributing nothing.
pub fn multiplier_spread<T: Scalar>(sample: &SampleSystem<T>, lambda_eq: &[T]) -> T {
    let width = sample.width();
    let n = T::lit(sample.n as f64);
    let rows: Vec<(T, Vec<T>)> = sample.patterns.iter().map(|p| (T::lit(p.count as f64) / n, lambda_w(lambda_eq, &p.eq, width))).collect();
    let mut trace = T::zero();
    for c in 0..width {
        let mean: T = rows.iter().map(|(w, v)| *w * v[c]).sum();
        let var: T = rows.iter().map(|(w, v)| *w * (v[c] - mean) * (v[c] - mean)).sum();
        trace += var;
    }
    trace
}

/// Data-driven `mu` per side from the unregularized multipliers.
pub fn select_tuning<T: Scalar>(engine: &Engine, sample: &SampleSystem<T>, v_dim: usize) -> Result<Tuning<T>> {
    let sys = sample.system();
    let lo = require_optimal(engine.solve_lp(sys, Direction::Min)?, "sample lower bound")?;
    let hi = require_optimal(engine.solve_lp(sys, Direction::Max)?, "sample upper bound")?;
    Ok(tuning_from(sample, v_dim, &lo, &hi))
}

fn tuning_from<T: Scalar>(sample: &SampleSystem<T>, v_dim: usize, lo: &SolveOutcome<T>, hi: &SolveOutcome<T>) -> Tuning<T> {
    let ne = sample.system().eq.len();
    let rate = sqrt_log_ratio::<T>(sample.n);
    let denom = T::lit((v_dim + 2) as f64);
    let side = |s: &SolveOutcome<T>| {
        let scale = multiplier_spread(sample, &s.multipliers[..ne]).sqrt() / denom;
        if scale > T::zero() {
            (rate * scale, scale, false)
        } else {
            log::warn!("multipliers carry no sampling variation; using mu = sqrt(log n / n)");
            (rate, scale, true)
        }
    };
    let (mu_lower, scale_lower, fallback_lower) = side(lo);
    let (mu_upper, scale_upper, fallback_upper) = side(hi);
    Tuning { mu_lower, mu_upper, scale_lower, scale_upper, fallback_lower, fallback_upper }
}

/// `sqrt(mean_i (lambda' g(W_i, eta))^2)`.
fn lagrangian_sd<T: Scalar>(sample: &SampleSystem<T>, s: &SolveOutcome<T>) -> T {
    let sys = sample.system();
    let ne = sys.eq.len();
    let width = sample.width();
    let cols = width - 1;
    // inequality rows are the same for every observation
    let constant: T = (0..sys.ineq.len()).map(|r| s.multipliers[ne + r] * sys.ineq.residual(r, &s.solution)).sum();
    let n = T::lit(sample.n as f64);
    let mut acc = T::zero();
    for p in &sample.patterns {
        let mut t = constant;
        for j in 0..ne {
            let l = s.multipliers[j];
            if l != T::zero() {
                let row = &p.eq[j * width..(j + 1) * width];
                t += l * (dot(&row[..cols], &s.solution) - row[cols]);
            }
        }
        acc += T::lit(p.count as f64) * t * t;
    }
    (acc / n).sqrt()
}

/// Coordinatewise bound on near-optimal points: `max(|min eta_k|, |max eta_k|)`
/// subject to the extra half-space.
fn eta_out<T: Scalar>(engine: &Engine, sample: &SampleSystem<T>, extra: &ExtraRow<T>) -> Result<Vec<T>> {
    let sys = sample.system();
    (0..sys.cols())
        .map(|k| {
            let a = require_optimal(engine.solve_lp_with_extra_row(sys, Some(extra), k, Direction::Min)?, "bias-correction program")?;
            let b = require_optimal(engine.solve_lp_with_extra_row(sys, Some(extra), k, Direction::Max)?, "bias-correction program")?;
            Ok(a.value.abs().max(b.value.abs()))
        })
        .collect()
}

/// Confidence interval for the bounds of `problem` from a sample.
pub fn estimate_bounds<T: Scalar>(
    engine: &Engine,
    problem: &BoundsProblem<T>,
    data: &crate::dgp::Dataset<T>,
    options: &InferenceOptions<T>,
) -> Result<InferenceResult<T>> {
    if !(options.alpha > T::zero() && options.alpha < T::lit(0.5)) {
        return Err(Error::InvalidSpec("alpha must lie in (0, 0.5)".into()));
    }
    let sample = assemble_sample(problem, data)?;
    let sys = sample.system();
    let n = sample.n;
    let lo = require_optimal(engine.solve_lp(sys, Direction::Min)?, "sample lower bound")?;
    let hi = require_optimal(engine.solve_lp(sys, Direction::Max)?, "sample upper bound")?;
    let (beta_lo, beta_hi) = (lo.value, hi.value);
    let tuning = match options.mu_override {
        Some((a, b)) => {
            if a < T::zero() || b < T::zero() {
                return Err(Error::InvalidSpec("mu must be nonnegative".into()));
            }
            Tuning { mu_lower: a, mu_upper: b, scale_lower: T::nan(), scale_upper: T::nan(), fallback_lower: false, fallback_upper: false }
        }
        None => tuning_from(&sample, problem.v_dim, &lo, &hi),
    };
    let cols = sys.cols();
    let side = |dir: Direction, mu: T, lp: SolveOutcome<T>, beta: T| -> Result<(T, Vec<T>, T, T)> {
        if mu == T::zero() {
            let sd = lagrangian_sd(&sample, &lp);
            return Ok((lp.value, vec![T::zero(); cols], lp.value, sd));
        }
        let qp = require_optimal(engine.solve_regularized(sys, dir, mu)?, "regularized program")?;
        let sd = lagrangian_sd(&sample, &qp);
        let extra = match dir {
            Direction::Min => ExtraRow::coordinate(cols, 0, T::one(), beta + mu),
            Direction::Max => ExtraRow::coordinate(cols, 0, -T::one(), -(beta - mu)),
        };
        let out = eta_out(engine, &sample, &extra)?;
        let norm2 = dot(&out, &out);
        let corrected = match dir {
            Direction::Min => qp.value - mu * norm2,
            Direction::Max => qp.value + mu * norm2,
        };
        Ok((qp.value, out, corrected, sd))
    };
    let (reg_lo, out_lo, beta_out_lo, sd_lo) = side(Direction::Min, tuning.mu_lower, lo, beta_lo)?;
    let (reg_hi, out_hi, beta_out_hi, sd_hi) = side(Direction::Max, tuning.mu_upper, hi, beta_hi)?;
    let c = normal::quantile(T::one() - options.alpha / T::lit(2.0));
    let root_n = T::lit(n as f64).sqrt();
    let ci = (beta_out_lo - c * sd_lo / root_n, beta_out_hi + c * sd_hi / root_n);
    Ok(InferenceResult {
        n,
        alpha: options.alpha,
        beta_lower_hat: beta_lo,
        beta_upper_hat: beta_hi,
        reg_lower: reg_lo,
        reg_upper: reg_hi,
        eta_out_lower: out_lo,
        eta_out_upper: out_hi,
        beta_out_lower: beta_out_lo,
        beta_out_upper: beta_out_hi,
        sigma_lower: sd_lo,
        sigma_upper: sd_hi,
        critical_value: c,
        ci,
        tuning,
    })
}

/// Aggregate of a coverage experiment; one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub n: usize,
    pub sigma: f64,
    pub v_dim: usize,
    pub target: String,
    pub coverage: f64,
    pub mean_width: f64,
    pub failures: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
}

impl CoverageReport {
    pub const CSV_HEADER: &'static str = "n,sigma,v_dim,target,coverage,mean_width,failures,M,seed";

    pub fn write_csv<W: Write>(reports: &[CoverageReport], w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in reports {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Coverage of `[lower, upper]` by the intervals that were computed
/// (`None` marks a failed replication, left out of the denominator), the
/// mean width over those, and the failure count.
pub fn coverage_from_intervals<T: Scalar>(lower: T, upper: T, intervals: &[Option<(T, T)>]) -> (f64, f64, usize) {
    let ok: Vec<(T, T)> = intervals.iter().flatten().copied().collect();
    let failures = intervals.len() - ok.len();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN, failures);
    }
    let m = ok.len() as f64;
    let hits = ok.iter().filter(|(a, b)| *a <= lower && *b >= upper).count() as f64;
    let width: f64 = ok.iter().map(|(a, b)| (*b - *a).to_f64_lossy()).sum::<f64>() / m;
    (hits / m, width, failures)
}

/// Per-replication record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication<T> {
    pub index: usize,
    pub seed: u64,
    pub result: Option<InferenceResult<T>>,
    pub error: Option<String>,
}

/// Everything a coverage run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageSpec<T> {
    pub dgp: DgpSpec<T>,
    pub problem: BoundsProblem<T>,
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub options: InferenceOptions<T>,
}

/// Runs the replications in parallel and reduces them in index order.
pub fn coverage_experiment<T: Scalar>(engine: &Engine, spec: &CoverageSpec<T>) -> Result<(CoverageReport, Vec<Replication<T>>)> {
    if spec.replications == 0 {
        return Err(Error::InvalidSpec("at least one replication is required".into()));
    }
    let moments = population_moments(&spec.dgp)?;
    let population = solve_bounds(engine, &assemble(&spec.problem, &moments)?)?;
    let (lower, upper) = population.interval().ok_or_else(|| Error::Inference(format!("population bounds are {}", population.status.as_str())))?;
    let reps: Vec<Replication<T>> = (0..spec.replications)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(spec.master_seed, i as u64);
            let data = sample(&spec.dgp, spec.n, seed);
            match estimate_bounds(engine, &spec.problem, &data, &spec.options) {
                Ok(r) => Replication { index: i, seed, result: Some(r), error: None },
                Err(e) => {
                    log::warn!("replication {i} failed: {e}");
                    Replication { index: i, seed, result: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let intervals: Vec<Option<(T, T)>> = reps.iter().map(|r| r.result.as_ref().map(|x| x.ci)).collect();
    let (coverage, mean_width, failures) = coverage_from_intervals(lower, upper, &intervals);
    let report = CoverageReport {
        n: spec.n,
        sigma: spec.dgp.sigma.to_f64_lossy(),
        v_dim: spec.dgp.v_dim,
        target: spec.problem.target.name(),
        coverage,
        mean_width,
        failures,
        m: spec.replications,
        seed: spec.master_seed,
    };
    Ok((report, reps))
}
