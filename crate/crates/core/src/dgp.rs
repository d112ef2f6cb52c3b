//! Simulation designs: Bernstein MTRs, two treatment models, population
//! moments by quadrature and seeded sampling.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bernstein::bernstein_eval;
use crate::error::{Error, Result};
use crate::model::{Block, BlockLayout, InstrumentSpace, MtrCoefficients, VPartition, Violation};
use crate::normal;
use crate::quadrature::Quadrature;
use crate::scalar::Scalar;
use crate::weights::{target_coefficients, weights_for, TargetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentModel {
    /// `D = 1[p(z) - h(V) + (0.75 - p(z)) sigma U >= 0]`, `h(v) = v` or `max(v1, v2)`.
    LocalDeparture,
    /// `D = 1[0.2 z1 - V + sigma z2 U >= 0]`, or `(0.6 - V1) z1 - 0.5 V2 + sigma z2 U >= 0` in 2-D.
    RandomCoefficient,
}

impl TreatmentModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "local" | "local_departure" => Ok(Self::LocalDeparture),
            "random" | "random_coefficient" => Ok(Self::RandomCoefficient),
            other => Err(Error::Parse(format!("unknown treatment model `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LocalDeparture => "local_departure",
            Self::RandomCoefficient => "random_coefficient",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgpSpec<T> {
    pub v_dim: usize,
    pub theta0: Vec<T>,
    pub theta1: Vec<T>,
    pub treatment: TreatmentModel,
    pub sigma: T,
    pub instruments: InstrumentSpace<T>,
}

const DEGREE: usize = 2;

fn lits<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

fn table_theta<T: Scalar>(v_dim: usize) -> (Vec<T>, Vec<T>) {
    if v_dim == 1 {
        (lits(&[0.6, 0.4, 0.3]), lits(&[0.75, 0.5, 0.3]))
    } else {
        (
            lits(&[0.7, 0.5, 0.5, 0.3, 0.2, 0.1, 0.1, 0.0, 0.0]),
            lits(&[0.85, 0.65, 0.5, 0.5, 0.45, 0.3, 0.2, 0.1, 0.1]),
        )
    }
}

impl<T: Scalar> DgpSpec<T> {
    /// Local-departure design: `Z` in {0,1,2} with mass (0.5, 0.4, 0.1), uniform policy law.
    pub fn local_departure(v_dim: usize, sigma: T) -> Self {
        let (theta0, theta1) = table_theta(v_dim);
        let third = T::one() / T::lit(3.0);
        let instruments = InstrumentSpace::new(
            vec![vec![T::zero()], vec![T::one()], vec![T::lit(2.0)]],
            lits(&[0.5, 0.4, 0.1]),
        )
        .with_policy(vec![third; 3]);
        Self { v_dim, theta0, theta1, treatment: TreatmentModel::LocalDeparture, sigma, instruments }
    }

    /// Random-coefficient design: independent `Z1` in {0,1,2} with mass (0.5, 0.4, 0.1)
    /// and `Z2` in {0.5, 1} with mass (0.7, 0.3); the policy makes `Z1` uniform.
    pub fn random_coefficient(v_dim: usize, sigma: T) -> Self {
        let (theta0, theta1) = table_theta(v_dim);
        let z1 = lits(&[0.0, 1.0, 2.0]);
        let z2 = lits(&[0.5, 1.0]);
        let p2 = lits(&[0.7, 0.3]);
        let instruments = InstrumentSpace::product((&z1, &lits(&[0.5, 0.4, 0.1])), (&z2, &p2));
        let third = T::one() / T::lit(3.0);
        let policy = InstrumentSpace::product((&z1, &[third; 3]), (&z2, &p2)).probabilities;
        let instruments = instruments.with_policy(policy);
        Self { v_dim, theta0, theta1, treatment: TreatmentModel::RandomCoefficient, sigma, instruments }
    }

    pub fn new(treatment: TreatmentModel, v_dim: usize, sigma: T) -> Self {
        match treatment {
            TreatmentModel::LocalDeparture => Self::local_departure(v_dim, sigma),
            TreatmentModel::RandomCoefficient => Self::random_coefficient(v_dim, sigma),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(1..=2).contains(&self.v_dim) {
            out.push(Violation::new("dgp.v_dim", "must be 1 or 2"));
        } else {
            let want = (DEGREE + 1).pow(self.v_dim as u32);
            for (name, th) in [("dgp.theta0", &self.theta0), ("dgp.theta1", &self.theta1)] {
                if th.len() != want {
                    out.push(Violation::new(name, format!("expected {want} coefficients, got {}", th.len())));
                }
            }
        }
        for (name, th) in [("dgp.theta0", &self.theta0), ("dgp.theta1", &self.theta1)] {
            if th.iter().any(|&c| !(c >= T::zero() && c <= T::one())) {
                out.push(Violation::new(name, "coefficients must lie in [0,1]"));
            }
        }
        if !(self.sigma > T::zero()) {
            out.push(Violation::new("dgp.sigma", "must be positive"));
        }
        out.extend(self.instruments.violations());
        match self.treatment {
            TreatmentModel::LocalDeparture => {
                if self.instruments.components() != 1 {
                    out.push(Violation::new("dgp.instruments", "local departure uses a scalar instrument"));
                } else if self.instruments.values.iter().any(|z| local_p(z[0]) >= T::lit(0.75)) {
                    out.push(Violation::new("dgp.instruments", "p(z) must stay below 0.75"));
                }
            }
            TreatmentModel::RandomCoefficient => {
                if self.instruments.components() != 2 {
                    out.push(Violation::new("dgp.instruments", "random coefficient uses two instrument components"));
                } else if self.instruments.values.iter().any(|z| z[1] == T::zero()) {
                    out.push(Violation::new("dgp.instruments", "z2 must be nonzero"));
                }
            }
        }
        out
    }

    pub fn m0(&self, v: &[T]) -> T {
        bernstein_eval(v, &self.theta0, DEGREE).expect("validated dimensions")
    }

    pub fn m1(&self, v: &[T]) -> T {
        bernstein_eval(v, &self.theta1, DEGREE).expect("validated dimensions")
    }

    /// Index of the latent selection equation, `D = 1[index + scale U >= 0]`.
    fn selection(&self, v: &[T], z: &[T]) -> (T, T) {
        match self.treatment {
            TreatmentModel::LocalDeparture => {
                let p = local_p(z[0]);
                let h = if v.len() == 1 { v[0] } else { v[0].max(v[1]) };
                (p - h, (T::lit(0.75) - p) * self.sigma)
            }
            TreatmentModel::RandomCoefficient => {
                let index = if v.len() == 1 {
                    T::lit(0.2) * z[0] - v[0]
                } else {
                    (T::lit(0.6) - v[0]) * z[0] - T::lit(0.5) * v[1]
                };
                (index, self.sigma * z[1])
            }
        }
    }

    /// `P(D = 1 | V = v, Z = z)`.
    pub fn propensity(&self, v: &[T], z: &[T]) -> Result<T> {
        if v.len() != self.v_dim {
            return Err(Error::Dimension(format!("v has {} components, model has {}", v.len(), self.v_dim)));
        }
        let (index, scale) = self.selection(v, z);
        if !(scale > T::zero()) {
            return Err(Error::InvalidSpec("selection scale must be positive (sigma > 0, z2 != 0)".into()));
        }
        Ok(normal::cdf(index / scale))
    }

    /// Whether the integrands kink along `v1 = v2`.
    pub fn kinks_on_diagonal(&self) -> bool {
        self.treatment == TreatmentModel::LocalDeparture && self.v_dim == 2
    }

    fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))
        }
    }
}

/// `p(z) = 0.35 + 0.325 z - 0.075 z^2`.
pub fn local_p<T: Scalar>(z: T) -> T {
    T::lit(0.35) + T::lit(0.325) * z - T::lit(0.075) * z * z
}

/// Per-instrument-point moments `E[YD 1{Z=z}]`, `E[Y(1-D) 1{Z=z}]`, `E[D 1{Z=z}]`
/// and the mass `P(Z=z)`, from quadrature or from a sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSet<T> {
    pub mass: Vec<T>,
    pub yd: Vec<T>,
    pub y0: Vec<T>,
    pub d: Vec<T>,
    /// Sample size when estimated from data.
    pub n: Option<usize>,
}

impl<T: Scalar> MomentSet<T> {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn prob_treated(&self) -> T {
        self.d.iter().copied().sum()
    }

    pub fn mean_outcome(&self) -> T {
        self.yd.iter().chain(&self.y0).copied().sum()
    }

    /// `P(D=1 | Z=z)`; zero where the point has no mass.
    pub fn propensity(&self, z: usize) -> T {
        if self.mass[z] > T::zero() {
            self.d[z] / self.mass[z]
        } else {
            T::zero()
        }
    }

    pub fn propensities(&self) -> Vec<T> {
        (0..self.len()).map(|z| self.propensity(z)).collect()
    }

    /// `(E[YD s], E[Y(1-D) s], E[D s])` for a function `s` given by its values on the support.
    pub fn for_function(&self, s: &[T]) -> [T; 3] {
        let f = |v: &[T]| s.iter().zip(v).map(|(&a, &b)| a * b).sum();
        [f(&self.yd), f(&self.y0), f(&self.d)]
    }

    /// Empirical moments of a dataset over an instrument support of size `nz`.
    pub fn from_dataset(data: &Dataset<T>) -> Result<Self> {
        if data.observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let nz = data.support.len();
        let mut counts = vec![[0usize; 4]; nz];
        for o in &data.observations {
            counts[o.z][(o.y as usize) * 2 + o.d as usize] += 1;
        }
        let n = T::lit(data.observations.len() as f64);
        let mut m = Self { mass: vec![T::zero(); nz], yd: vec![T::zero(); nz], y0: vec![T::zero(); nz], d: vec![T::zero(); nz], n: Some(data.observations.len()) };
        for (z, c) in counts.iter().enumerate() {
            // c indexed by 2y + d
            m.mass[z] = T::lit((c[0] + c[1] + c[2] + c[3]) as f64) / n;
            m.yd[z] = T::lit(c[3] as f64) / n;
            m.y0[z] = T::lit(c[2] as f64) / n;
            m.d[z] = T::lit((c[1] + c[3]) as f64) / n;
        }
        Ok(m)
    }
}

/// Population moments by adaptive quadrature.
pub fn population_moments<T: Scalar>(dgp: &DgpSpec<T>) -> Result<MomentSet<T>> {
    population_moments_with(dgp, &Quadrature::default())
}

pub fn population_moments_with<T: Scalar>(dgp: &DgpSpec<T>, quad: &Quadrature<T>) -> Result<MomentSet<T>> {
    dgp.check()?;
    let nz = dgp.instruments.len();
    let lo = vec![T::zero(); dgp.v_dim];
    let hi = vec![T::one(); dgp.v_dim];
    let mut m = MomentSet { mass: dgp.instruments.probabilities.clone(), yd: vec![T::zero(); nz], y0: vec![T::zero(); nz], d: vec![T::zero(); nz], n: None };
    for (zi, z) in dgp.instruments.values.iter().enumerate() {
        let r = quad.integrate_region(&lo, &hi, 3, dgp.kinks_on_diagonal(), |v, out| {
            let md = dgp.propensity(v, z).expect("validated");
            out[0] = dgp.m1(v) * md;
            out[1] = dgp.m0(v) * (T::one() - md);
            out[2] = md;
        })?;
        let f = m.mass[zi];
        m.yd[zi] = f * r[0];
        m.y0[zi] = f * r[1];
        m.d[zi] = f * r[2];
    }
    Ok(m)
}

/// True value of the target by quadrature of the weighted MTR functional.
/// PRTE is reported as `E[Y*] - E[Y]`.
pub fn true_target<T: Scalar>(dgp: &DgpSpec<T>, target: &TargetSpec<T>) -> Result<T> {
    let moments = population_moments(dgp)?;
    true_target_with(dgp, target, &moments, &Quadrature::default())
}

pub fn true_target_with<T: Scalar>(
    dgp: &DgpSpec<T>,
    target: &TargetSpec<T>,
    moments: &MomentSet<T>,
    quad: &Quadrature<T>,
) -> Result<T> {
    let weights = weights_for(target, moments, &dgp.instruments)?;
    // integrate piecewise so that jumps of the weights fall on region edges
    let regions = VPartition::from_knots(dgp.v_dim, &weights.v_discontinuities)?;
    let mut total = T::zero();
    for cell in regions.cells() {
        let mid = cell.midpoint();
        for (zi, z) in dgp.instruments.values.iter().enumerate() {
            let [w00, w01, w10, w11] = weights.at(&mid, zi);
            if [w00, w01, w10, w11].iter().all(|w| *w == T::zero()) {
                continue;
            }
            let r = quad.integrate_region(&cell.lower, &cell.upper, 1, dgp.kinks_on_diagonal(), |v, out| {
                let md = dgp.propensity(v, z).expect("validated");
                let (m0, m1) = (dgp.m0(v), dgp.m1(v));
                out[0] = m0 * (T::one() - md) * w00 + m0 * md * w01 + m1 * (T::one() - md) * w10 + m1 * md * w11;
            })?;
            total += moments.mass[zi] * r[0];
        }
    }
    if let TargetSpec::Prte = target {
        total -= moments.mean_outcome();
    }
    Ok(total)
}

/// Cell averages of the true functions on `partition`, with `eta1` set to the
/// target value implied by the spline coefficients.
pub fn cell_averaged_coefficients<T: Scalar>(
    dgp: &DgpSpec<T>,
    partition: &VPartition<T>,
    target: &TargetSpec<T>,
    moments: &MomentSet<T>,
) -> Result<MtrCoefficients<T>> {
    if partition.dim() != dgp.v_dim {
        return Err(Error::Dimension("partition dimension differs from the model".into()));
    }
    let quad = Quadrature::default();
    let inst = &dgp.instruments;
    let layout = BlockLayout::new(partition.len(), inst.num_covariates(), inst.len());
    let mut c = MtrCoefficients::zeros(layout);
    for cell in partition.cells() {
        let vol = cell.volume();
        let r = quad.integrate_region(&cell.lower, &cell.upper, 2, dgp.kinks_on_diagonal(), |v, out| {
            out[0] = dgp.m0(v);
            out[1] = dgp.m1(v);
        })?;
        for x in 0..layout.covariates {
            c.set(Block::M0, cell.index, x, r[0] / vol);
            c.set(Block::M1, cell.index, x, r[1] / vol);
        }
        for (zi, z) in inst.values.iter().enumerate() {
            let r = quad.integrate_region(&cell.lower, &cell.upper, 3, dgp.kinks_on_diagonal(), |v, out| {
                let md = dgp.propensity(v, z).expect("validated");
                out[0] = md;
                out[1] = dgp.m0(v) * (T::one() - md);
                out[2] = dgp.m1(v) * md;
            })?;
            c.set(Block::MD, cell.index, zi, r[0] / vol);
            c.set(Block::M0D, cell.index, zi, r[1] / vol);
            c.set(Block::M1D, cell.index, zi, r[2] / vol);
        }
    }
    let w = weights_for(target, moments, inst)?;
    let t = target_coefficients(&w, partition, &layout, &moments.mass, &inst.covariates)?;
    c.eta[0] = crate::scalar::dot(&t, &c.eta);
    Ok(c)
}

/// One draw of `(Y, D, Z)`; `z` indexes the instrument support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub y: u8,
    pub d: u8,
    pub z: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub observations: Vec<Observation>,
    pub support: Vec<Vec<T>>,
    pub seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.observations.iter().any(|o| o.z >= self.support.len()) {
            out.push(Violation::new("dataset", "instrument value outside the support"));
        }
        if self.observations.iter().any(|o| o.y > 1 || o.d > 1) {
            out.push(Violation::new("dataset", "y and d must be binary"));
        }
        out
    }

    /// Writes `y,d,z1[,z2]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let comps = self.support.first().map_or(1, Vec::len);
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "d".to_string()];
        header.extend((1..=comps).map(|i| format!("z{i}")));
        wr.write_record(&header)?;
        for o in &self.observations {
            let mut rec = vec![o.y.to_string(), o.d.to_string()];
            rec.extend(self.support[o.z].iter().map(|x| format!("{}", x.to_f64_lossy())));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `y,d,z1[,z2]`, matching instrument values against `support`.
    pub fn read_csv<R: Read>(r: R, support: Vec<Vec<T>>, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let inst = InstrumentSpace::new(support.clone(), vec![T::zero(); support.len()]);
        let mut observations = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| Error::Parse(format!("bad field {i} in {rec:?}")))
            };
            let (y, d) = (num(0)?, num(1)?);
            let z: Vec<T> = (2..rec.len()).map(|i| num(i).map(T::lit)).collect::<Result<_>>()?;
            let zi = inst.find(&z).ok_or_else(|| Error::InvalidSpec(format!("instrument value {z:?} not in support")))?;
            observations.push(Observation { y: (y != 0.0) as u8, d: (d != 0.0) as u8, z: zi });
        }
        Ok(Self { observations, support, seed })
    }
}

/// SplitMix64 finalizer; used to derive independent replication seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut x = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Draws `n` rows with a ChaCha8 stream seeded by `seed`.
pub fn sample<T: Scalar>(dgp: &DgpSpec<T>, n: usize, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs: Vec<f64> = dgp.instruments.probabilities.iter().map(|p| p.to_f64_lossy()).collect();
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut v = vec![T::zero(); dgp.v_dim];
    let observations = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut z = last;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    z = i;
                    break;
                }
            }
            for x in v.iter_mut() {
                *x = T::lit(rng.random::<f64>());
            }
            let noise: f64 = rng.sample(StandardNormal);
            let e0: f64 = rng.random();
            let e1: f64 = rng.random();
            let (index, scale) = dgp.selection(&v, &dgp.instruments.values[z]);
            let d = (index + scale * T::lit(noise) >= T::zero()) as u8;
            let y = if d == 1 { dgp.m1(&v) > T::lit(e1) } else { dgp.m0(&v) > T::lit(e0) } as u8;
            Observation { y, d, z }
        })
        .collect();
    Dataset { observations, support: dgp.instruments.values.clone(), seed }
}
