//! Reproduction of the reference tables from population moments.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::{BoundsProblem, RestrictionSet};
use crate::dgp::{population_moments, true_target, DgpSpec, MomentSet, TreatmentModel};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::model::{BoundsResult, BoundsStatus};
use crate::solver::Engine;
use crate::weights::TargetSpec;

/// Agreement required with a three-decimal reference value.
pub const TABLE_TOLERANCE: f64 = 5e-3;
/// Largest width of an interval read as a point.
pub const POINT_WIDTH: f64 = 1e-6;

const REFERENCE: &str = include_str!("../data/reference_tables.toml");

#[derive(Clone, Debug, Deserialize)]
pub struct TableInfo {
    pub id: u32,
    pub title: String,
    pub model: String,
    pub target: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceTruth {
    pub table: u32,
    pub panel: String,
    pub sigma: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceCell {
    pub table: u32,
    pub panel: String,
    pub method: String,
    pub restrictions: String,
    pub sigma: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceData {
    pub version: u32,
    pub table: Vec<TableInfo>,
    pub truth: Vec<ReferenceTruth>,
    pub cell: Vec<ReferenceCell>,
}

/// Parsed reference data.
pub fn reference() -> &'static ReferenceData {
    static DATA: OnceLock<ReferenceData> = OnceLock::new();
    DATA.get_or_init(|| toml::from_str(REFERENCE).expect("embedded reference data parses"))
}

pub fn table_ids() -> Vec<u32> {
    reference().table.iter().map(|t| t.id).collect()
}

fn panel_dim(panel: &str) -> usize {
    if panel == "b" {
        2
    } else {
        1
    }
}

/// One design of a table: model, dimension and noise scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Design {
    pub model: TreatmentModel,
    pub v_dim: usize,
    pub sigma: f64,
}

impl Design {
    pub fn dgp(&self) -> DgpSpec<f64> {
        DgpSpec::new(self.model, self.v_dim, self.sigma)
    }
}

/// Bounds for one method on population moments. CvR assumes the design's dimension.
pub fn compute_cell(
    engine: &Engine,
    design: &Design,
    moments: &MomentSet<f64>,
    target: &TargetSpec<f64>,
    method: Method,
    restrictions: RestrictionSet,
) -> Result<BoundsResult<f64>> {
    let dgp = design.dgp();
    let problem = BoundsProblem::new(dgp.instruments.clone(), target.clone(), design.v_dim).with_restrictions(restrictions);
    method.bounds(engine, &problem, moments)
}

#[derive(Clone, Debug, Serialize)]
pub struct CellOutcome {
    pub panel: String,
    pub sigma: f64,
    pub method: String,
    pub restrictions: String,
    pub expected: Option<(f64, f64)>,
    pub status: BoundsStatus,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruthOutcome {
    pub panel: String,
    pub sigma: f64,
    pub expected: f64,
    pub computed: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableReport {
    pub id: u32,
    pub title: String,
    pub cells: Vec<CellOutcome>,
    pub truths: Vec<TruthOutcome>,
}

impl TableReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass) && self.truths.iter().all(|t| t.pass)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.pass).count() + self.truths.iter().filter(|t| !t.pass).count()
    }

    /// Plain-text report with one line per cell.
    pub fn write_diff<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "table {}: {}", self.id, self.title)?;
        let show = |v: Option<(f64, f64)>| match v {
            Some((a, b)) => format!("[{a:.3}, {b:.3}]"),
            None => "empty".to_string(),
        };
        for t in &self.truths {
            writeln!(
                w,
                "  {} panel {} sigma {:.1} true value: expected {:.3} computed {:.4}",
                if t.pass { "ok  " } else { "FAIL" },
                t.panel,
                t.sigma,
                t.expected,
                t.computed
            )?;
        }
        for c in &self.cells {
            let got = match c.status {
                BoundsStatus::Bounded => format!("[{:.4}, {:.4}]", c.lower.unwrap_or(f64::NAN), c.upper.unwrap_or(f64::NAN)),
                s => s.as_str().to_string(),
            };
            writeln!(
                w,
                "  {} panel {} sigma {:.1} {:<6} {:<5} expected {:<16} computed {}{}",
                if c.pass { "ok  " } else { "FAIL" },
                c.panel,
                c.sigma,
                c.method,
                c.restrictions,
                show(c.expected),
                got,
                if c.note.is_empty() { String::new() } else { format!(" ({})", c.note) }
            )?;
        }
        writeln!(w, "table {}: {} of {} checks pass", self.id, self.cells.len() + self.truths.len() - self.failures(), self.cells.len() + self.truths.len())
    }
}

fn judge(cell: &ReferenceCell, point: bool, res: &std::result::Result<BoundsResult<f64>, Error>) -> CellOutcome {
    let expected = cell.lower.zip(cell.upper);
    let mut out = CellOutcome {
        panel: cell.panel.clone(),
        sigma: cell.sigma,
        method: cell.method.clone(),
        restrictions: cell.restrictions.clone(),
        expected,
        status: BoundsStatus::Empty,
        lower: None,
        upper: None,
        pass: false,
        note: String::new(),
    };
    match res {
        Err(e) => out.note = e.to_string(),
        Ok(r) => {
            out.status = r.status;
            out.lower = r.lower;
            out.upper = r.upper;
            out.pass = match (expected, r.interval()) {
                (None, None) => r.is_empty(),
                (Some((a, b)), Some((l, u))) => {
                    let close = (l - a).abs() <= TABLE_TOLERANCE && (u - b).abs() <= TABLE_TOLERANCE;
                    if point && cell.method == "cvr" && u - l > POINT_WIDTH {
                        out.note = format!("width {:.2e} exceeds {POINT_WIDTH:e}", u - l);
                        false
                    } else {
                        close
                    }
                }
                _ => false,
            };
            if r.is_empty() {
                if let Some(m) = r.diagnostics.certificate_margin {
                    out.note = format!("certificate margin {m:.2e}");
                }
            }
        }
    }
    out
}

/// Recomputes every cell of a reference table.
pub fn reproduce_table(id: u32) -> Result<TableReport> {
    let data = reference();
    let info = data.table.iter().find(|t| t.id == id).ok_or_else(|| Error::InvalidSpec(format!("no reference table {id}; known: {:?}", table_ids())))?;
    let model = TreatmentModel::parse(&info.model)?;
    let target = TargetSpec::parse(&info.target)?;
    let point = target == TargetSpec::Prte;
    let cells: Vec<&ReferenceCell> = data.cell.iter().filter(|c| c.table == id).collect();
    let truths: Vec<&ReferenceTruth> = data.truth.iter().filter(|t| t.table == id).collect();

    // one moment set per design, computed in parallel
    let mut designs: Vec<(String, u64)> = cells.iter().map(|c| (c.panel.clone(), c.sigma.to_bits())).collect();
    designs.sort();
    designs.dedup();
    let moments: BTreeMap<(String, u64), Result<(MomentSet<f64>, f64)>> = designs
        .par_iter()
        .map(|(panel, bits)| {
            let design = Design { model, v_dim: panel_dim(panel), sigma: f64::from_bits(*bits) };
            let dgp = design.dgp();
            let r = population_moments(&dgp).and_then(|m| Ok((m, true_target(&dgp, &target)?)));
            ((panel.clone(), *bits), r)
        })
        .collect();
    let engine = Engine::default();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|c| {
            let design = Design { model, v_dim: panel_dim(&c.panel), sigma: c.sigma };
            let res = match &moments[&(c.panel.clone(), c.sigma.to_bits())] {
                Err(e) => Err(Error::InvalidSpec(e.to_string())),
                Ok((m, _)) => Method::parse(&c.method)
                    .and_then(|method| Ok((method, RestrictionSet::parse(&c.restrictions)?)))
                    .and_then(|(method, r)| compute_cell(&engine, &design, m, &target, method, r)),
            };
            judge(c, point, &res)
        })
        .collect();
    let mut truth_out = Vec::new();
    for t in truths {
        let computed = match &moments.get(&(t.panel.clone(), t.sigma.to_bits())) {
            Some(Ok((_, v))) => *v,
            Some(Err(e)) => return Err(Error::InvalidSpec(e.to_string())),
            None => {
                let design = Design { model, v_dim: panel_dim(&t.panel), sigma: t.sigma };
                true_target(&design.dgp(), &target)?
            }
        };
        truth_out.push(TruthOutcome { panel: t.panel.clone(), sigma: t.sigma, expected: t.value, computed, pass: (computed - t.value).abs() <= TABLE_TOLERANCE });
    }
    Ok(TableReport { id, title: info.title.clone(), cells: outcomes, truths: truth_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_data_shape() {
        let d = reference();
        assert_eq!(d.version, 1);
        assert_eq!(table_ids(), (3..=10).collect::<Vec<_>>());
        assert_eq!(d.cell.iter().filter(|c| c.table == 3).count(), 24);
        assert!(d.cell.iter().filter(|c| c.table == 6 && c.method == "mst").all(|c| c.lower.is_none()));
    }
}
