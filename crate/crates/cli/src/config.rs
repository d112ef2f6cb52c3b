//! TOML run configuration. Section keys mirror the library field names:
//! `[dgp]` the data-generating process, `[target]` the parameter, `[method]`
//! the bounding method and restrictions, `[inference]` the sample settings.

use std::path::Path;

use ivbounds::assemble::RestrictionSet;
use ivbounds::dgp::{DgpSpec, TreatmentModel};
use ivbounds::estimators::Method;
use ivbounds::weights::TargetSpec;
use serde::Deserialize;

use crate::CliError;

/// A scalar or a list of them; lists span a grid.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub dgp: DgpSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub inference: InferenceSection,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    /// `local_departure` (or `local`) or `random_coefficient` (or `random`).
    pub treatment: Option<String>,
    pub v_dim: Option<OneOrMany<usize>>,
    pub sigma: Option<OneOrMany<f64>>,
    /// Bernstein coefficients replacing the defaults.
    pub theta0: Option<Vec<f64>>,
    pub theta1: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Target name, e.g. `ate`, `prte`, `glate`, `ate_x`.
    pub kind: Option<OneOrMany<String>>,
    /// Window for `glate`.
    pub v_lo: Option<f64>,
    pub v_hi: Option<f64>,
    /// Covariate values for `ate_x`.
    pub covariates: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    /// `cvr`, `mst`, `manski` or `hv`.
    pub name: Option<OneOrMany<String>>,
    /// Assumed dimension of the unobservable; defaults to the DGP's.
    pub v_dim: Option<usize>,
    /// Extra partition knots on every axis.
    pub refinement: Option<Vec<f64>>,
    /// Restriction sets as strings (`none`, `r1`, `r2`, `r3`, or a comma list).
    /// Overrides the boolean fields below when present.
    pub restrictions: Option<OneOrMany<String>>,
    #[serde(default)]
    pub mtr: bool,
    #[serde(default)]
    pub mtr_at_mean: bool,
    #[serde(default)]
    pub mts: bool,
    #[serde(default)]
    pub stochastic_monotonicity: bool,
    #[serde(default)]
    pub deterministic_monotonicity: bool,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub n: Option<OneOrMany<usize>>,
    /// Monte Carlo replications.
    #[serde(alias = "M")]
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    /// Fixed tuning parameters instead of the data-driven choice.
    pub mu_lower: Option<f64>,
    pub mu_upper: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn treatment(&self) -> Result<TreatmentModel, CliError> {
        Ok(TreatmentModel::parse(self.dgp.treatment.as_deref().unwrap_or("local"))?)
    }

    pub fn v_dims(&self) -> Vec<usize> {
        self.dgp.v_dim.as_ref().map_or(vec![1], OneOrMany::to_vec)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.dgp.sigma.as_ref().map_or(vec![0.1], OneOrMany::to_vec)
    }

    /// The DGP for one grid point, with coefficient overrides, validated.
    pub fn dgp(&self, v_dim: usize, sigma: f64) -> Result<DgpSpec<f64>, CliError> {
        let treatment = self.treatment()?;
        if !(1..=2).contains(&v_dim) {
            return Err(CliError::Validation(format!("dgp.v_dim must be 1 or 2, got {v_dim}")));
        }
        let mut dgp = DgpSpec::new(treatment, v_dim, sigma);
        if let Some(t) = &self.dgp.theta0 {
            dgp.theta0 = t.clone();
        }
        if let Some(t) = &self.dgp.theta1 {
            dgp.theta1 = t.clone();
        }
        if let Some(v) = dgp.violations().first() {
            return Err(CliError::Validation(v.to_string()));
        }
        Ok(dgp)
    }

    pub fn targets(&self) -> Result<Vec<TargetSpec<f64>>, CliError> {
        let kinds = self.target.kind.as_ref().map_or(vec!["ate".to_string()], OneOrMany::to_vec);
        kinds
            .iter()
            .map(|k| {
                let spec = match k.trim().to_ascii_lowercase().as_str() {
                    "glate" => match (self.target.v_lo, self.target.v_hi) {
                        (Some(lo), Some(hi)) => TargetSpec::GeneralizedLate { v_lo: lo, v_hi: hi },
                        _ => return Err(CliError::Validation("target.kind = \"glate\" needs target.v_lo and target.v_hi".into())),
                    },
                    "ate_x" => match &self.target.covariates {
                        Some(c) => TargetSpec::AteGivenX { covariates: c.clone() },
                        None => return Err(CliError::Validation("target.kind = \"ate_x\" needs target.covariates".into())),
                    },
                    _ => TargetSpec::parse(k)?,
                };
                if let Some(v) = spec.violations().first() {
                    return Err(CliError::Validation(v.to_string()));
                }
                Ok(spec)
            })
            .collect()
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        let names = self.method.name.as_ref().map_or(vec!["cvr".to_string()], OneOrMany::to_vec);
        names.iter().map(|n| Ok(Method::parse(n)?)).collect()
    }

    pub fn restrictions(&self) -> Result<Vec<RestrictionSet>, CliError> {
        let m = &self.method;
        match &m.restrictions {
            Some(list) => list.to_vec().iter().map(|s| Ok(RestrictionSet::parse(s)?)).collect(),
            None => Ok(vec![RestrictionSet {
                mtr: m.mtr,
                mtr_at_mean: m.mtr_at_mean,
                mts: m.mts,
                stochastic_monotonicity: m.stochastic_monotonicity,
                deterministic_monotonicity: m.deterministic_monotonicity,
            }]),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.inference.alpha.unwrap_or(0.05)
    }

    pub fn mu_override(&self) -> Result<Option<(f64, f64)>, CliError> {
        match (self.inference.mu_lower, self.inference.mu_upper) {
            (None, None) => Ok(None),
            (Some(l), Some(u)) => Ok(Some((l, u))),
            _ => Err(CliError::Validation("inference.mu_lower and inference.mu_upper go together".into())),
        }
    }
}
