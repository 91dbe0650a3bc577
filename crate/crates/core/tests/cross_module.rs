//! Checks that tie two or more modules together: independent computation
//! paths that must agree, and the desk-scale equivalences.

use std::sync::OnceLock;

use bergman_core::carleson::{build_atomic_function, carleson_checks, khinchine_probe, CheckContext};
use bergman_core::geometry::{build_lattice, Lattice, LatticeParams};
use bergman_core::kernel::{compute_moments, KernelParams, MomentTable};
use bergman_core::measures::{berezin_function, berezin_measure, field_grid, lp_norm, BaseMeasure, Measure, PolarCells, RadialProfile};
use bergman_core::toeplitz::{compact_tail, operator_berezin, schatten_report, ToeplitzMatrix, DEFAULT_DIM};
use bergman_core::weights::WeightModel;
use bergman_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    t: MomentTable,
    lat: Lattice,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
        let t = compute_moments(&w, &KernelParams::default()).unwrap();
        let lat = build_lattice(&w, &LatticeParams::new(0.5, 0.9, 0.95), 7).unwrap();
        Fixture { t, lat }
    })
}

fn random_points(n: usize, radius: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::from_polar(radius * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

#[test]
fn operator_berezin_matches_measure_berezin() {
    let f = fixture();
    let t = &f.t;
    let reach = t.resolved_radius(0.95, DEFAULT_DIM - 1) * 0.95;
    for seed in 0..3 {
        let atoms = random_points(6, 0.6, 100 + seed);
        let masses: Vec<f64> = (0..6).map(|i| 0.1 + 0.2 * i as f64).collect();
        let mu = Measure::atoms(atoms, masses).unwrap();
        let m = ToeplitzMatrix::assemble(&mu, t, DEFAULT_DIM).unwrap();
        let pts = random_points(100, reach, seed);
        let direct = berezin_measure(&mu, t, &pts).unwrap();
        for (z, v) in pts.iter().zip(&direct.values) {
            let o = operator_berezin(&m, t, *z).unwrap();
            assert!((o - v).abs() <= 1e-6 * v, "{z}: {o} vs {v}");
        }
    }
}

#[test]
fn berezin_of_functions_is_bounded_on_lp() {
    let f = fixture();
    let t = &f.t;
    let w = &t.weight;
    let grid = field_grid(w);
    let functions = vec![
        Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.95),
        Measure::radial(RadialProfile::Power { level: 1.0, power: 3.0 }, 0.95),
        Measure::radial(RadialProfile::Annulus { level: 2.0, inner: 0.3, outer: 0.6 }, 0.95),
        Measure::radial(RadialProfile::BoundaryPower { level: 1.0, exponent: 0.5 }, 0.95),
        Measure::Grid {
            cells: PolarCells::from_fn(0.8, 24, 48, |z| 1.0 + z.re.max(0.0)),
        },
    ];
    for g in &functions {
        let ft = berezin_function(g, t, &grid).unwrap();
        let values = bergman_core::measures::TransformField {
            values: grid.points().iter().map(|z| g.density(*z)).collect(),
            ..ft.clone()
        };
        for p in [1.0, 2.0, f64::INFINITY] {
            let lhs = lp_norm(&ft, p, BaseMeasure::Lebesgue, &grid, w).unwrap();
            let rhs = lp_norm(&values, p, BaseMeasure::Lebesgue, &grid, w).unwrap();
            let c = lhs / rhs;
            assert!(c.is_finite() && c < 10.0, "p = {p}: constant {c}");
        }
    }
    assert!(berezin_function(&Measure::atom(Complex64::new(0.1, 0.0), 1.0), t, &grid).is_err());
}

#[test]
fn lattice_atoms_count_exactly_below_the_separation() {
    let f = fixture();
    let w = &f.t.weight;
    let measures = bergman_core::measures::canonical_measures(w, &f.lat);
    let atoms = &measures.iter().find(|(n, _)| n == "lattice_atoms").unwrap().1;
    // averaging radius below the separation s·r so each disc holds one atom
    let mut small = f.lat.clone();
    small.params.r = 0.3;
    let grid = field_grid(w);
    let reps = schatten_report(atoms, w, &f.t, &small, 0.3, &[0.5, 1.0, 2.0], DEFAULT_DIM, &grid).unwrap();
    for r in &reps {
        let got = r.value("lattice_avg_lp").unwrap();
        let want = 50f64.powf(1.0 / r.p);
        assert!((got - want).abs() <= 1e-12 * want, "p = {}: {got} vs {want}", r.p);
        assert!(r.scaling_drift <= 1e-6);
    }
}

#[test]
fn tail_sweep_for_densities() {
    let t = &fixture().t;
    let mu = Measure::radial(RadialProfile::BoundaryPower { level: 1.0, exponent: 0.5 }, 0.9);
    let sweep: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64 * 0.95).collect();
    let tail = compact_tail(&mu, t, DEFAULT_DIM, &sweep).unwrap();
    for w in tail.windows(2) {
        assert!(w[1].1 <= w[0].1 * (1.0 + 1e-10));
    }
    assert_eq!(tail.last().unwrap().1, 0.0);
}

#[test]
fn equal_exponent_ratio_keeps_average_quantity() {
    let f = fixture();
    let ctx = CheckContext::new(&f.t, &f.lat, 0.5, DEFAULT_DIM, 100.0).unwrap();
    let mu = Measure::atoms(random_points(5, 0.5, 11), vec![0.2; 5]).unwrap();
    let reps = carleson_checks(&mu, &ctx, &[(1.0, 1.0), (2.0, 2.0), (1.0, 2.0), (2.0, 4.0)]).unwrap();
    assert_eq!(reps[0].value("avg_sup"), reps[1].value("avg_sup"));
    let a = reps[2].value("avg_sup").unwrap();
    let b = reps[3].value("avg_sup").unwrap();
    assert!((a - b).abs() <= 1e-12 * a);
    for r in &reps {
        assert!(r.scaling_drift <= 1e-6);
        let lower = r.value("embedding_lower_bound").unwrap();
        let min_sup = ["berezin_sup", "avg_sup", "lattice_sup"]
            .iter()
            .map(|n| r.value(n).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(lower <= 100.0 * min_sup);
    }
}

#[test]
fn atomic_function_ratio_is_stable_across_seeds() {
    let f = fixture();
    let t = &f.t;
    let reach = t.resolved_radius(0.95, t.n_basis()) * 0.95;
    let inner: Vec<usize> = (0..f.lat.len()).filter(|&k| f.lat.points[k].norm() <= reach).collect();
    assert!(inner.len() >= 100);
    for p in [1.0, 2.0] {
        let ratios: Vec<f64> = (0..10)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let c: Vec<(usize, f64)> = inner[..100].iter().map(|&k| (k, rng.gen_range(-1.0..1.0))).collect();
                build_atomic_function(&f.lat, &c, p, t).unwrap().ratio
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for r in &ratios {
            assert!((r / mean - 1.0).abs() <= 0.5, "p = {p}: {ratios:?}");
        }
    }
}

#[test]
fn khinchine_lower_bound_is_positive() {
    let f = fixture();
    let t = &f.t;
    let mu = Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.7);
    let inner: Vec<usize> = (0..f.lat.len()).filter(|&k| f.lat.points[k].norm() <= 0.6).take(100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c: Vec<(usize, f64)> = inner.iter().map(|&k| (k, rng.gen_range(0.5..1.5))).collect();
    let rep = khinchine_probe(&mu, t, &f.lat, &c, 2.0, 2.0, 64, 17).unwrap();
    assert!(rep.rhs > 0.0 && rep.mc_mean > 0.0);
    assert!(rep.ratio > 0.0 && rep.ratio.is_finite());
    let zero = khinchine_probe(&Measure::zero(), t, &f.lat, &c, 2.0, 2.0, 64, 17).unwrap();
    assert_eq!(zero.mc_mean, 0.0);
}
