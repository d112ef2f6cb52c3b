use ivbounds::assemble::{
    assemble, assemble_equalities, assemble_sample, build_partition, reported_coefficients, BoundsProblem, IvLikeSet, RestrictionSet,
};
use ivbounds::dgp::{cell_averaged_coefficients, population_moments, sample, true_target, DgpSpec, MomentSet};
use ivbounds::model::{Block, BlockLayout, VPartition};
use ivbounds::weights::{target_coefficients, weights_for, TargetSpec, WeightSpec};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn simpson(f: impl Fn(f64) -> f64, intervals: usize) -> f64 {
    let h = 1.0 / intervals as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..intervals {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn table_one_rows() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.1);
    let m = population_moments(&dgp).unwrap();
    let ate = weights_for(&TargetSpec::Ate, &m, &dgp.instruments).unwrap();
    for z in 0..3 {
        assert_eq!(ate.at(&[0.3], z), [-1.0, -1.0, 1.0, 1.0]);
    }
    let prte = weights_for(&TargetSpec::Prte, &m, &dgp.instruments).unwrap();
    for z in 0..3 {
        let r = (1.0 / 3.0) / dgp.instruments.probabilities[z];
        let w = prte.at(&[0.3], z);
        assert!((w[0] - r).abs() < 1e-15 && (w[3] - r).abs() < 1e-15 && w[1] == 0.0 && w[2] == 0.0);
    }
    let late = weights_for(&TargetSpec::GeneralizedLate { v_lo: 0.0, v_hi: 1.0 }, &m, &dgp.instruments).unwrap();
    for v in [0.0, 0.4, 1.0] {
        assert_eq!(late.at(&[v], 1), ate.at(&[v], 1));
    }
}

#[test]
fn zero_weights_give_zero_coefficients() {
    let layout = BlockLayout::new(2, 1, 3);
    let p = VPartition::from_knots(1, &[0.5]).unwrap();
    let w = WeightSpec::constant(vec![[0.0; 4]; 3]);
    let t = target_coefficients(&w, &p, &layout, &[0.5, 0.4, 0.1], &[0, 0, 0]).unwrap();
    assert!(t.iter().all(|&x| x == 0.0));
}

#[test]
fn ate_on_one_cell() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.1);
    let m = population_moments(&dgp).unwrap();
    let layout = BlockLayout::new(1, 1, 3);
    let w = weights_for(&TargetSpec::Ate, &m, &dgp.instruments).unwrap();
    let t = target_coefficients(&w, &VPartition::unit(1), &layout, &m.mass, &dgp.instruments.covariates).unwrap();
    assert!((t[layout.index(Block::M0, 0, 0)] + 1.0).abs() < 1e-15);
    assert!((t[layout.index(Block::M1, 0, 0)] - 1.0).abs() < 1e-15);
    for z in 0..3 {
        assert_eq!(t[layout.index(Block::M0D, 0, z)], 0.0);
        assert_eq!(t[layout.index(Block::M1D, 0, z)], 0.0);
        assert_eq!(t[layout.index(Block::MD, 0, z)], 0.0);
    }
}

#[test]
fn coefficients_reproduce_direct_integrals() {
    // Gamma at the cell-averaged truth against Simpson integrals of the true functions
    let dgp = DgpSpec::<f64>::local_departure(1, 0.1);
    let m = population_moments(&dgp).unwrap();
    let f = &dgp.instruments.probabilities;
    let q = dgp.instruments.policy_probabilities.clone().unwrap();
    let n = 40_000;
    let int = |g: &dyn Fn(f64, &[f64]) -> f64| -> Vec<f64> { dgp.instruments.values.iter().map(|z| simpson(|v| g(v, z), n)).collect() };
    let md = |v: f64, z: &[f64]| dgp.propensity(&[v], z).unwrap();
    let m0_treated = int(&|v, z| dgp.m0(&[v]) * md(v, z));
    let m0_untreated = int(&|v, z| dgp.m0(&[v]) * (1.0 - md(v, z)));
    let m1_treated = int(&|v, z| dgp.m1(&[v]) * md(v, z));
    let m1_untreated = int(&|v, z| dgp.m1(&[v]) * (1.0 - md(v, z)));
    let dot = |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let p1 = dot(f, &int(&|v, z| md(v, z)));
    let p0 = 1.0 - p1;
    let ey_star = dot(&q, &m1_treated) + dot(&q, &m0_untreated);
    let cases = [
        (TargetSpec::Att, (dot(f, &m1_treated) - dot(f, &m0_treated)) / p1),
        (TargetSpec::Atu, (dot(f, &m1_untreated) - dot(f, &m0_untreated)) / p0),
        (TargetSpec::AvgSelectionBias, dot(f, &m0_treated) / p1 - dot(f, &m0_untreated) / p0),
        (TargetSpec::AvgTreated, (0.75 + 0.5 + 0.3) / 3.0),
        (TargetSpec::Prte, ey_star),
    ];
    for refinement in [vec![], vec![0.35, 0.6, 0.7]] {
        let p = VPartition::from_knots(1, &refinement).unwrap();
        for (target, expected) in &cases {
            let eta = cell_averaged_coefficients(&dgp, &p, target, &m).unwrap();
            let w = weights_for(target, &m, &dgp.instruments).unwrap();
            let t = target_coefficients(&w, &p, &eta.layout, &m.mass, &dgp.instruments.covariates).unwrap();
            let got = dot(&t, &eta.eta);
            assert!((got - expected).abs() < 1e-8, "{target}: {got} vs {expected}");
        }
    }
    // the reported PRTE subtracts the observed mean
    let prte = true_target(&dgp, &TargetSpec::Prte).unwrap();
    assert!((prte - (ey_star - m.mean_outcome())).abs() < 1e-8);
}

#[test]
fn coefficients_integrate_cellwise_constant_functions() {
    // a 0.001 midpoint grid integrates functions that are constant between the knots exactly
    let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
    let m = population_moments(&dgp).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    for target in [TargetSpec::Ate, TargetSpec::Att, TargetSpec::AvgSelectionOnGain, TargetSpec::GeneralizedLate { v_lo: 0.3, v_hi: 0.8 }] {
        let w = weights_for(&target, &m, &dgp.instruments).unwrap();
        let p = build_partition(1, &w, None, &[0.5]).unwrap();
        let layout = BlockLayout::new(p.len(), 1, 3);
        let t = target_coefficients(&w, &p, &layout, &m.mass, &dgp.instruments.covariates).unwrap();
        let eta: Vec<f64> = (0..layout.len()).map(|_| rng.random()).collect();
        let grid = 1000;
        let mut direct = 0.0;
        for i in 0..grid {
            let v = (i as f64 + 0.5) / grid as f64;
            let k = p.locate(&[v]).unwrap();
            for z in 0..3 {
                let [w00, w01, w10, w11] = w.at(&[v], z);
                let get = |b: Block, val: usize| eta[layout.index(b, k, val)];
                let g = w01 * get(Block::M0, 0) + (w00 - w01) * get(Block::M0D, z) + w10 * get(Block::M1, 0) + (w11 - w10) * get(Block::M1D, z);
                direct += m.mass[z] * g / grid as f64;
            }
        }
        let got: f64 = t.iter().zip(&eta).map(|(a, b)| a * b).sum();
        assert!((got - direct).abs() < 1e-10, "{target}: {got} vs {direct}");
    }
}

#[test]
fn partition_knots() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.1);
    let m = population_moments(&dgp).unwrap();
    let ate = weights_for(&TargetSpec::Ate, &m, &dgp.instruments).unwrap();
    assert_eq!(build_partition(1, &ate, None, &[]).unwrap().knots(0), &[0.0, 1.0]);
    let late = weights_for(&TargetSpec::GeneralizedLate { v_lo: 0.3, v_hi: 0.8 }, &m, &dgp.instruments).unwrap();
    let p = build_partition(1, &late, None, &[]).unwrap();
    assert!(p.has_knot(0, 0.3) && p.has_knot(0, 0.8));
    let mut mst = BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1);
    mst.restrictions.deterministic_monotonicity = true;
    let a = assemble(&mst, &m).unwrap();
    assert_eq!(a.partition.len(), 4);
    for (k, e) in a.partition.knots(0).iter().zip([0.0, 0.35, 0.6, 0.7, 1.0]) {
        assert!((k - e).abs() < 1e-9);
    }
}

#[test]
fn truth_satisfies_equalities() {
    for (dgp, refinement) in [
        (DgpSpec::<f64>::local_departure(1, 0.1), vec![0.5]),
        (DgpSpec::<f64>::random_coefficient(2, 0.5), vec![0.3]),
        (DgpSpec::<f64>::local_departure(2, 0.9), vec![]),
    ] {
        let m = population_moments(&dgp).unwrap();
        for target in [TargetSpec::Ate, TargetSpec::Prte] {
            let p = BoundsProblem::new(dgp.instruments.clone(), target.clone(), dgp.v_dim).with_refinement(refinement.clone());
            let a = assemble(&p, &m).unwrap();
            assert_eq!(a.system.eq.len(), 1 + 3 * dgp.instruments.len());
            let mut eta = cell_averaged_coefficients(&dgp, &a.partition, &target, &m).unwrap();
            // eta1 as the reported target
            eta.eta[0] = a.t_star.iter().zip(&eta.eta).map(|(x, y)| x * y).sum();
            for r in 0..a.system.eq.len() {
                assert!(a.system.eq.residual(r, &eta.eta).abs() < 1e-8, "{} row {}", target, a.system.eq.names[r]);
            }
            for r in 0..a.system.ineq.len() {
                assert!(a.system.ineq.residual(r, &eta.eta) < 1e-8, "row {}", a.system.ineq.names[r]);
            }
            let truth = true_target(&dgp, &target).unwrap();
            assert!((eta.eta[0] - truth).abs() < 1e-8);
        }
    }
}

// the design's propensity is not monotone in z for v > 0.75, so only the MTR rows are checked
#[test]
fn truth_satisfies_shape_rows() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
    let m = population_moments(&dgp).unwrap();
    let p = BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1)
        .with_refinement(vec![0.25, 0.5, 0.75])
        .with_restrictions(RestrictionSet { mtr: true, mtr_at_mean: true, ..RestrictionSet::NONE });
    let a = assemble(&p, &m).unwrap();
    let eta = cell_averaged_coefficients(&dgp, &a.partition, &TargetSpec::Ate, &m).unwrap();
    for r in 0..a.system.ineq.len() {
        assert!(a.system.ineq.residual(r, &eta.eta) < 1e-10, "row {}", a.system.ineq.names[r]);
    }
}

#[test]
fn restriction_rows() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
    let m = population_moments(&dgp).unwrap();
    let base = BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1).with_refinement(vec![0.25, 0.5, 0.75]);
    let rows = |r: RestrictionSet| assemble(&base.clone().with_restrictions(r), &m).unwrap().system.ineq;
    let none = rows(RestrictionSet::NONE);
    let (r1, r2, r3) = (rows(RestrictionSet::R1), rows(RestrictionSet::R2), rows(RestrictionSet::R3));
    // one pointwise row per cell (4 cells, one covariate value)
    assert_eq!(r1.len() - none.len(), 4);
    assert_eq!(r2.len() - none.len(), 2);
    assert_eq!(r3.len() - none.len(), 6);
    let extra = |r: &ivbounds::model::LinearRows<f64>| -> Vec<(Vec<f64>, f64)> {
        (none.len()..r.len()).map(|i| (r.row(i).to_vec(), r.rhs[i])).collect()
    };
    let mut union = extra(&r1);
    union.extend(extra(&r2));
    assert_eq!(extra(&r3), union);
}

#[test]
fn zero_mass_instrument_rows_are_dropped() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
    let mut m = population_moments(&dgp).unwrap();
    let layout = BlockLayout::new(1, 1, 3);
    let part = VPartition::unit(1);
    let t = vec![0.0; layout.len()];
    m.mass[2] = 0.0;
    m.yd[2] = 0.0;
    m.y0[2] = 0.0;
    m.d[2] = 0.0;
    let iv = IvLikeSet::from_moments(&m);
    assert_eq!(iv.len(), 2);
    assert_eq!(assemble_equalities(&layout, &part, &iv, &m, &t).unwrap().len(), 7);
    assert!(assemble_equalities(&layout, &part, &IvLikeSet::full(2), &m, &t).is_err());
}

#[test]
fn sample_system_identities() {
    let dgp = DgpSpec::<f64>::random_coefficient(1, 0.5);
    let p = BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Prte, 1).with_refinement(vec![0.5]);
    let data = sample(&dgp, 3000, 8);
    let once = assemble_sample(&p, &data).unwrap();
    let mut twice = data.clone();
    twice.observations.extend(data.observations.iter().copied());
    let doubled = assemble_sample(&p, &twice).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    assert!(close(&once.system().eq.coeffs, &doubled.system().eq.coeffs));
    assert!(close(&once.system().eq.rhs, &doubled.system().eq.rhs));
    assert!(close(&once.system().ineq.coeffs, &doubled.system().ineq.coeffs));

    // one observation: the system is that observation's block
    let mut single = data.clone();
    single.observations.truncate(1);
    let one = assemble_sample(&BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1), &single).unwrap();
    assert_eq!(one.patterns.len(), 1);
    let w = one.width();
    let eq = &one.system().eq;
    let block = &one.patterns[0].eq;
    for r in 0..eq.len() {
        assert!(close(eq.row(r), &block[r * w..r * w + w - 1]));
        assert!((eq.rhs[r] - block[r * w + w - 1]).abs() < 1e-12);
    }
}

#[test]
fn sample_system_converges() {
    // each entry of the mean block within four standard errors of the population entry
    let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
    let p = BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1).with_refinement(vec![0.5]);
    let pop = assemble(&p, &population_moments(&dgp).unwrap()).unwrap();
    let s = assemble_sample(&p, &sample(&dgp, 1_000_000, 12)).unwrap();
    let w = s.width();
    let mean = s.mean_eq();
    let n = s.n as f64;
    for r in 0..pop.system.eq.len() {
        for c in 0..w {
            let var: f64 = s.patterns.iter().map(|pat| pat.count as f64 / n * (pat.eq[r * w + c] - mean[r * w + c]).powi(2)).sum();
            let target = if c + 1 == w { pop.system.eq.rhs[r] } else { pop.system.eq.row(r)[c] };
            let se = (var / n).sqrt();
            assert!((mean[r * w + c] - target).abs() <= 4.0 * se + 1e-12, "row {r} col {c}");
        }
    }
}

#[test]
fn lp_dump() {
    let dgp = DgpSpec::<f64>::local_departure(1, 0.1);
    let a = assemble(&BoundsProblem::new(dgp.instruments.clone(), TargetSpec::Ate, 1), &population_moments(&dgp).unwrap()).unwrap();
    let mut buf = Vec::new();
    a.system.write_lp(&mut buf, false).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for key in ["Minimize", "Subject To", "Bounds", "End", "eta1 free"] {
        assert!(text.contains(key), "{key}");
    }
    let rows = text.lines().filter(|l| l.trim_start().starts_with('r') && l.contains(':')).count();
    assert_eq!(rows, a.system.eq.len() + a.system.ineq.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // 16 cases x 625 draws = 10^4 points
    #[test]
    fn mccormick_rows_hold_at_exact_products(seed in any::<u64>(), cells in 1usize..4, nz in 1usize..4) {
        let mut rng = StdRng::seed_from_u64(seed);
        let values: Vec<Vec<f64>> = (0..nz).map(|z| vec![z as f64]).collect();
        let inst = ivbounds::model::InstrumentSpace::new(values, vec![1.0 / nz as f64; nz]);
        let knots: Vec<f64> = (1..cells).map(|k| k as f64 / cells as f64).collect();
        let moments = MomentSet { mass: inst.probabilities.clone(), yd: vec![0.1 / nz as f64; nz], y0: vec![0.1 / nz as f64; nz], d: vec![0.5 / nz as f64; nz], n: None };
        let p = BoundsProblem::new(inst, TargetSpec::Ate, 1).with_refinement(knots);
        let a = assemble(&p, &moments).unwrap();
        let layout = a.system.layout;
        for _ in 0..625 {
            let mut eta = vec![0.0; layout.len()];
            for k in 0..layout.cells {
                let (m0, m1): (f64, f64) = (rng.random(), rng.random());
                eta[layout.index(Block::M0, k, 0)] = m0;
                eta[layout.index(Block::M1, k, 0)] = m1;
                for z in 0..nz {
                    let md: f64 = rng.random();
                    eta[layout.index(Block::MD, k, z)] = md;
                    eta[layout.index(Block::M0D, k, z)] = m0 * (1.0 - md);
                    eta[layout.index(Block::M1D, k, z)] = m1 * md;
                }
            }
            for r in 0..a.system.ineq.len() {
                prop_assert!(a.system.ineq.residual(r, &eta) <= 1e-12, "row {}", a.system.ineq.names[r]);
            }
            for (j, x) in eta.iter().enumerate().skip(1) {
                prop_assert!(*x >= a.system.lower[j] && *x <= a.system.upper[j]);
            }
        }
    }

    #[test]
    fn reported_prte_subtracts_the_observed_mean(refine in proptest::collection::vec(0.05f64..0.95, 0..3)) {
        let dgp = DgpSpec::<f64>::local_departure(1, 0.5);
        let m = population_moments(&dgp).unwrap();
        let w = weights_for(&TargetSpec::Prte, &m, &dgp.instruments).unwrap();
        let part = build_partition(1, &w, None, &refine).unwrap();
        let layout = BlockLayout::new(part.len(), 1, 3);
        let plain = target_coefficients(&w, &part, &layout, &m.mass, &dgp.instruments.covariates).unwrap();
        let rep = reported_coefficients(&TargetSpec::Prte, &w, &part, &layout, &m.mass, &dgp.instruments.covariates).unwrap();
        let vols = part.volumes();
        for (k, vol) in vols.iter().enumerate() {
            for z in 0..3 {
                for b in [Block::M0D, Block::M1D] {
                    let i = layout.index(b, k, z);
                    prop_assert!((plain[i] - rep[i] - vol * m.mass[z]).abs() < 1e-14);
                }
            }
        }
    }
}
