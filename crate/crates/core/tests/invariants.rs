use std::sync::OnceLock;

use bergman_core::kernel::{compute_moments, KernelParams, MomentTable};
use bergman_core::measures::{avg_function, berezin_measure, Measure};
use bergman_core::toeplitz::{spectrum, ToeplitzMatrix};
use bergman_core::weights::WeightModel;
use bergman_core::Complex64;
use proptest::prelude::*;

fn table() -> &'static MomentTable {
    static T: OnceLock<MomentTable> = OnceLock::new();
    T.get_or_init(|| {
        let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
        compute_moments(&w, &KernelParams::default()).unwrap()
    })
}

fn atoms(max: usize) -> impl Strategy<Value = Vec<(Complex64, f64)>> {
    prop::collection::vec((0.0..0.7f64, 0.0..std::f64::consts::TAU, 0.01..2.0f64), 1..max)
        .prop_map(|v| v.into_iter().map(|(r, th, m)| (Complex64::from_polar(r, th), m)).collect())
}

fn measure(a: &[(Complex64, f64)]) -> Measure {
    Measure::atoms(a.iter().map(|x| x.0).collect(), a.iter().map(|x| x.1).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transforms_are_additive_and_monotone(a in atoms(6), b in atoms(6), z in (0.0..0.6f64, 0.0..6.3f64)) {
        let z = vec![Complex64::from_polar(z.0, z.1)];
        let (ma, mb) = (measure(&a), measure(&b));
        let both = Measure::Sum { parts: vec![ma.clone(), mb.clone()] };
        for f in [
            |m: &Measure, z: &Vec<Complex64>| avg_function(m, &table().weight, 0.4, z).unwrap().values[0],
            |m: &Measure, z: &Vec<Complex64>| berezin_measure(m, table(), z).unwrap().values[0],
        ] {
            let (va, vb, vab) = (f(&ma, &z), f(&mb, &z), f(&both, &z));
            prop_assert!((vab - va - vb).abs() <= 1e-12 * vab.max(1e-300));
            prop_assert!(vab >= va && vab >= vb);
        }
    }

    #[test]
    fn toeplitz_is_hermitian_psd_with_ordered_schatten(a in atoms(8)) {
        let t = table();
        let m = ToeplitzMatrix::assemble(&measure(&a), t, 120).unwrap();
        prop_assert!(m.hermitian_defect() <= 1e-12 * m.trace());
        let s = spectrum(&m, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        prop_assert!(s.min_raw >= -1e-10 * s.operator_norm);
        prop_assert!((s.trace - s.eigenvalues.iter().sum::<f64>()).abs() <= 1e-8 * s.trace);
        for w in s.schatten.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12));
        }
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn scaling_triples_spectrum(a in atoms(5)) {
        let t = table();
        let mu = measure(&a);
        let s1 = spectrum(&ToeplitzMatrix::assemble(&mu, t, 80).unwrap(), &[1.0, 2.0]).unwrap();
        let s3 = spectrum(&ToeplitzMatrix::assemble(&mu.scaled(3.0), t, 80).unwrap(), &[1.0, 2.0]).unwrap();
        for ((_, x), (_, y)) in s1.schatten.iter().zip(&s3.schatten) {
            prop_assert!((y - 3.0 * x).abs() <= 1e-10 * y);
        }
    }
}
