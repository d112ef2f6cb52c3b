use std::collections::BTreeMap;
use std::io::Write;

use ivbounds::assemble::{assemble, assemble_sample, BoundsProblem, RestrictionSet};
use ivbounds::dgp::{population_moments, sample, DgpSpec, MomentSet};
use ivbounds::estimators::Method;
use ivbounds::inference::{coverage_experiment, CoverageReport, CoverageSpec, InferenceOptions};
use ivbounds::solver::{Direction, Engine};
use ivbounds::tables::{reproduce_table, table_ids};
use ivbounds::weights::TargetSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::CliError;

/// One line of `bounds` output.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BoundsRecord {
    pub method: String,
    pub dgp: String,
    pub target: String,
    pub sigma: f64,
    pub v_dim: usize,
    pub restrictions: String,
    pub status: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

struct GridPoint {
    v_dim: usize,
    sigma: f64,
    target: TargetSpec<f64>,
    method: Method,
    restrictions: RestrictionSet,
}

fn problem(cfg: &Config, dgp: &DgpSpec<f64>, target: TargetSpec<f64>, restrictions: RestrictionSet) -> BoundsProblem<f64> {
    let mut p = BoundsProblem::new(dgp.instruments.clone(), target, cfg.method.v_dim.unwrap_or(dgp.v_dim)).with_restrictions(restrictions);
    if let Some(k) = &cfg.method.refinement {
        p = p.with_refinement(k.clone());
    }
    p
}

/// Population bounds over the configured grid, in grid order.
pub fn bounds(cfg: &Config) -> Result<Vec<BoundsRecord>, CliError> {
    let targets = cfg.targets()?;
    let methods = cfg.methods()?;
    let restrictions = cfg.restrictions()?;
    let mut grid = Vec::new();
    let mut dgps = BTreeMap::new();
    for v_dim in cfg.v_dims() {
        for sigma in cfg.sigmas() {
            dgps.insert((v_dim, sigma.to_bits()), cfg.dgp(v_dim, sigma)?);
            for target in &targets {
                for &method in &methods {
                    for &r in &restrictions {
                        if matches!(method, Method::Manski | Method::Hv) && (*target != TargetSpec::Ate || !r.is_none()) {
                            return Err(CliError::Validation(format!("{} bounds cover the unrestricted ATE only", method.name())));
                        }
                        grid.push(GridPoint { v_dim, sigma, target: target.clone(), method, restrictions: r });
                    }
                }
            }
        }
    }
    let moments: BTreeMap<(usize, u64), MomentSet<f64>> = dgps
        .par_iter()
        .map(|(key, dgp)| Ok((*key, population_moments(dgp)?)))
        .collect::<Result<_, CliError>>()?;
    let engine = Engine::default();
    grid.par_iter()
        .map(|g| {
            let key = (g.v_dim, g.sigma.to_bits());
            let dgp = &dgps[&key];
            let r = g.method.bounds(&engine, &problem(cfg, dgp, g.target.clone(), g.restrictions), &moments[&key])?;
            Ok(BoundsRecord {
                method: g.method.name().to_string(),
                dgp: dgp.treatment.name().to_string(),
                target: g.target.name(),
                sigma: g.sigma,
                v_dim: g.v_dim,
                restrictions: g.restrictions.to_string(),
                status: r.status.as_str().to_string(),
                lower: r.lower,
                upper: r.upper,
            })
        })
        .collect()
}

/// Diff reports for the named tables; the flag is true when every check passes.
pub fn tables(ids: &[String]) -> Result<(String, bool), CliError> {
    let known = table_ids();
    let mut wanted = Vec::new();
    for id in ids {
        if id == "all" {
            wanted.extend(known.iter().copied());
            continue;
        }
        match id.parse::<u32>() {
            Ok(n) if known.contains(&n) => wanted.push(n),
            _ => return Err(CliError::Validation(format!("unknown table `{id}`; known: {known:?} or `all`"))),
        }
    }
    let mut out = Vec::new();
    let mut pass = true;
    for id in wanted {
        let report = reproduce_table(id)?;
        pass &= report.all_pass();
        report.write_diff(&mut out).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok((String::from_utf8(out).expect("report is utf-8"), pass))
}

/// Coverage experiment for every configured target and sample size.
pub fn mc(cfg: &Config, seed: u64) -> Result<Vec<CoverageReport>, CliError> {
    if cfg.methods()? != [Method::Cvr] {
        return Err(CliError::Validation("confidence intervals are available for method cvr only".into()));
    }
    let restrictions = cfg.restrictions()?;
    let [r] = restrictions[..] else {
        return Err(CliError::Validation("mc takes a single restriction set".into()));
    };
    let sizes = cfg.inference.n.as_ref().map(|n| n.to_vec()).ok_or_else(|| CliError::Validation("inference.n is required".into()))?;
    let replications = cfg.inference.replications.ok_or_else(|| CliError::Validation("inference.replications (or M) is required".into()))?;
    let options = InferenceOptions { alpha: cfg.alpha(), mu_override: cfg.mu_override()? };
    let engine = Engine::default();
    let mut reports = Vec::new();
    for v_dim in cfg.v_dims() {
        for sigma in cfg.sigmas() {
            let dgp = cfg.dgp(v_dim, sigma)?;
            for target in cfg.targets()? {
                let mut p = problem(cfg, &dgp, target, r);
                // the Monte Carlo default partition cuts every axis at 0.5
                if cfg.method.refinement.is_none() {
                    p = p.with_refinement(vec![0.5]);
                }
                for &n in &sizes {
                    let spec = CoverageSpec { dgp: dgp.clone(), problem: p.clone(), n, replications, master_seed: seed, options: options.clone() };
                    let (report, _) = coverage_experiment(&engine, &spec)?;
                    reports.push(report);
                }
            }
        }
    }
    Ok(reports)
}

/// One simulated dataset as CSV.
pub fn sample_csv(cfg: &Config, n: usize, seed: u64) -> Result<Vec<u8>, CliError> {
    let (v_dim, sigma) = single_design(cfg)?;
    let data = sample(&cfg.dgp(v_dim, sigma)?, n, seed);
    let mut out = Vec::new();
    data.write_csv(&mut out)?;
    Ok(out)
}

fn single_design(cfg: &Config) -> Result<(usize, f64), CliError> {
    match (&cfg.v_dims()[..], &cfg.sigmas()[..]) {
        ([v], [s]) => Ok((*v, *s)),
        _ => Err(CliError::Validation("this command takes a single v_dim and sigma".into())),
    }
}

/// The assembled program in LP format, optionally followed by a KKT report
/// for the requested direction. With `n`, the program is built from a
/// simulated sample instead of population moments.
pub fn dump(cfg: &Config, direction: Direction, kkt: bool, n: Option<usize>, seed: u64) -> Result<Vec<u8>, CliError> {
    let (v_dim, sigma) = single_design(cfg)?;
    let (target, method, restrictions) = match (&cfg.targets()?[..], &cfg.methods()?[..], &cfg.restrictions()?[..]) {
        ([t], [m], [r]) => (t.clone(), *m, *r),
        _ => return Err(CliError::Validation("dump takes a single target, method and restriction set".into())),
    };
    let dgp = cfg.dgp(v_dim, sigma)?;
    let mut p = problem(cfg, &dgp, target, restrictions);
    match method {
        Method::Cvr => {}
        Method::Mst => {
            p.restrictions.deterministic_monotonicity = true;
            p.v_dim = 1;
        }
        m => return Err(CliError::Validation(format!("{} bounds are closed-form; there is no program to dump", m.name()))),
    }
    let system = match n {
        Some(n) => assemble_sample(&p, &sample(&dgp, n, seed))?.system().clone(),
        None => assemble(&p, &population_moments(&dgp)?)?.system,
    };
    let mut out = Vec::new();
    let io = |e: std::io::Error| CliError::Validation(e.to_string());
    system.write_lp(&mut out, direction == Direction::Max).map_err(io)?;
    if kkt {
        let r = Engine::default().solve_lp(&system, direction)?;
        writeln!(out, "\\ KKT").map_err(io)?;
        let mut report = Vec::new();
        r.write_kkt(&mut report).map_err(io)?;
        for line in String::from_utf8_lossy(&report).lines() {
            writeln!(out, "\\ {line}").map_err(io)?;
        }
    }
    Ok(out)
}
