//! Target parameters, their weight functions and the spline coefficient vector `T*`.

use std::fmt;

use serde::Serialize;

use crate::dgp::MomentSet;
use crate::error::{Error, Result};
use crate::model::{Block, BlockLayout, InstrumentSpace, VPartition, Violation};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TargetSpec<T> {
    AvgUntreated,
    AvgTreated,
    Ate,
    /// ATE conditional on the covariate falling in the listed values.
    AteGivenX { covariates: Vec<usize> },
    Att,
    Atu,
    /// ATE over `v_lo <= v <= v_hi` on the first axis of V.
    GeneralizedLate { v_lo: T, v_hi: T },
    /// `E[Y*] - E[Y]` for the policy law stored in the instrument space.
    Prte,
    AvgSelectionBias,
    AvgSelectionOnGain,
}

impl<T: Scalar> TargetSpec<T> {
    pub fn name(&self) -> String {
        match self {
            TargetSpec::AvgUntreated => "y0".into(),
            TargetSpec::AvgTreated => "y1".into(),
            TargetSpec::Ate => "ate".into(),
            TargetSpec::AteGivenX { covariates } => {
                let xs: Vec<String> = covariates.iter().map(|x| x.to_string()).collect();
                format!("ate_x:{}", xs.join(","))
            }
            TargetSpec::Att => "att".into(),
            TargetSpec::Atu => "atu".into(),
            TargetSpec::GeneralizedLate { v_lo, v_hi } => format!("glate:{v_lo}:{v_hi}"),
            TargetSpec::Prte => "prte".into(),
            TargetSpec::AvgSelectionBias => "sel_bias".into(),
            TargetSpec::AvgSelectionOnGain => "sel_gain".into(),
        }
    }

    /// Parses the names produced by [`TargetSpec::name`].
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let num = |x: &str| {
            x.parse::<f64>().map(T::lit).map_err(|_| Error::Parse(format!("bad number `{x}` in target `{s}`")))
        };
        Ok(match s.as_str() {
            "y0" | "avg_untreated" => TargetSpec::AvgUntreated,
            "y1" | "avg_treated" => TargetSpec::AvgTreated,
            "ate" => TargetSpec::Ate,
            "att" => TargetSpec::Att,
            "atu" => TargetSpec::Atu,
            "prte" => TargetSpec::Prte,
            "sel_bias" | "avg_selection_bias" => TargetSpec::AvgSelectionBias,
            "sel_gain" | "avg_selection_on_gain" => TargetSpec::AvgSelectionOnGain,
            other => {
                if let Some(rest) = other.strip_prefix("glate:") {
                    let (lo, hi) = rest.split_once(':').ok_or_else(|| Error::Parse(format!("expected glate:lo:hi, got `{s}`")))?;
                    TargetSpec::GeneralizedLate { v_lo: num(lo)?, v_hi: num(hi)? }
                } else if let Some(rest) = other.strip_prefix("ate_x:") {
                    let covariates = rest
                        .split(',')
                        .map(|x| x.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad covariate `{x}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    TargetSpec::AteGivenX { covariates }
                } else {
                    return Err(Error::Parse(format!("unknown target `{s}`")));
                }
            }
        })
    }

    pub fn violations(&self) -> Vec<Violation> {
        match self {
            TargetSpec::GeneralizedLate { v_lo, v_hi } if !(T::zero() <= *v_lo && v_lo < v_hi && *v_hi <= T::one()) => {
                vec![Violation::new("target", "generalized LATE needs 0 <= v_lo < v_hi <= 1")]
            }
            TargetSpec::AteGivenX { covariates } if covariates.is_empty() => {
                vec![Violation::new("target", "conditioning set is empty")]
            }
            _ => Vec::new(),
        }
    }
}

impl<T: Scalar> fmt::Display for TargetSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Weights `(w00, w01, w10, w11)` per instrument point, optionally switched
/// off outside a window on the first axis of V.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec<T> {
    per_point: Vec<[T; 4]>,
    window: Option<(T, T)>,
    pub v_discontinuities: Vec<T>,
    pub depends_on_v: bool,
}

impl<T: Scalar> WeightSpec<T> {
    pub fn constant(per_point: Vec<[T; 4]>) -> Self {
        Self { per_point, window: None, v_discontinuities: Vec::new(), depends_on_v: false }
    }

    pub fn at(&self, v: &[T], z: usize) -> [T; 4] {
        if let Some((lo, hi)) = self.window {
            if v[0] < lo || v[0] > hi {
                return [T::zero(); 4];
            }
        }
        self.per_point[z]
    }

    pub fn len(&self) -> usize {
        self.per_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }
}

/// Weight functions of `target` with denominators taken from `moments`.
pub fn weights_for<T: Scalar>(
    target: &TargetSpec<T>,
    moments: &MomentSet<T>,
    instruments: &InstrumentSpace<T>,
) -> Result<WeightSpec<T>> {
    let nz = moments.mass.len();
    if instruments.len() != nz {
        return Err(Error::Dimension("moments and instrument support differ in length".into()));
    }
    let (o, one) = (T::zero(), T::one());
    let total: T = moments.mass.iter().copied().sum();
    let p1 = moments.prob_treated();
    let p0 = total - p1;
    let inv = |p: T, what: &'static str| if p > T::zero() { Ok(one / p) } else { Err(Error::ZeroDenominator(what)) };
    let same = |w: [T; 4]| Ok(WeightSpec::constant(vec![w; nz]));
    match target {
        TargetSpec::AvgUntreated => same([one, one, o, o]),
        TargetSpec::AvgTreated => same([o, o, one, one]),
        TargetSpec::Ate => same([-one, -one, one, one]),
        TargetSpec::Att => {
            let a = inv(p1, "P(D=1)")?;
            same([o, -a, o, a])
        }
        TargetSpec::Atu => {
            let b = inv(p0, "P(D=0)")?;
            same([-b, o, b, o])
        }
        TargetSpec::AvgSelectionBias => {
            let (a, b) = (inv(p1, "P(D=1)")?, inv(p0, "P(D=0)")?);
            same([-b, a, o, o])
        }
        TargetSpec::AvgSelectionOnGain => {
            let (a, b) = (inv(p1, "P(D=1)")?, inv(p0, "P(D=0)")?);
            same([b, -a, -b, a])
        }
        TargetSpec::AteGivenX { covariates } => {
            let inside = |z: usize| covariates.contains(&instruments.covariates[z]);
            let px: T = (0..nz).filter(|&z| inside(z)).map(|z| moments.mass[z]).sum();
            let c = inv(px, "P(X in set)")?;
            Ok(WeightSpec::constant(
                (0..nz).map(|z| if inside(z) { [-c, -c, c, c] } else { [o; 4] }).collect(),
            ))
        }
        TargetSpec::GeneralizedLate { v_lo, v_hi } => {
            if !target.violations().is_empty() {
                return Err(Error::InvalidSpec("generalized LATE needs 0 <= v_lo < v_hi <= 1".into()));
            }
            let c = one / (*v_hi - *v_lo);
            Ok(WeightSpec {
                per_point: vec![[-c, -c, c, c]; nz],
                window: Some((*v_lo, *v_hi)),
                v_discontinuities: vec![*v_lo, *v_hi],
                depends_on_v: true,
            })
        }
        TargetSpec::Prte => {
            let policy = instruments.policy_probabilities.as_ref().ok_or(Error::MissingPolicy)?;
            let per_point = policy
                .iter()
                .zip(&moments.mass)
                .map(|(&q, &f)| {
                    if q <= T::zero() {
                        Ok([o; 4])
                    } else if f <= T::zero() {
                        Err(Error::ZeroDenominator("F_Z(z) where the policy law has mass"))
                    } else {
                        let r = q / f;
                        Ok([r, o, o, r])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WeightSpec::constant(per_point))
        }
    }
}

/// Coefficients `T*` (full length, zero in the `eta1` slot) such that
/// `T*'eta` equals the target functional of the spline functions. `masses`
/// weights each instrument point.
pub fn target_coefficients<T: Scalar>(
    weights: &WeightSpec<T>,
    partition: &VPartition<T>,
    layout: &BlockLayout,
    masses: &[T],
    covariates: &[usize],
) -> Result<Vec<T>> {
    if masses.len() != layout.instruments || weights.len() != layout.instruments || layout.cells != partition.len() {
        return Err(Error::Dimension("weights, masses and layout disagree".into()));
    }
    for &x in &weights.v_discontinuities {
        if !partition.has_knot(0, x) {
            return Err(Error::UnalignedDiscontinuity(x.to_f64_lossy()));
        }
    }
    let mut t = vec![T::zero(); layout.len()];
    for cell in partition.cells() {
        let vol = cell.volume();
        let mid = cell.midpoint();
        for (z, &f) in masses.iter().enumerate() {
            if f == T::zero() {
                continue;
            }
            let [w00, w01, w10, w11] = weights.at(&mid, z);
            let x = covariates[z];
            let fv = f * vol;
            t[layout.index(Block::M0, cell.index, x)] += fv * w01;
            t[layout.index(Block::M1, cell.index, x)] += fv * w10;
            t[layout.index(Block::M0D, cell.index, z)] += fv * (w00 - w01);
            t[layout.index(Block::M1D, cell.index, z)] += fv * (w11 - w10);
        }
    }
    Ok(t)
}
