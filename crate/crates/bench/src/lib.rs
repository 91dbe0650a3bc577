//! Shared fixtures for the criterion benches.

use bergman_core::kernel::{compute_moments, KernelParams, MomentTable};
use bergman_core::measures::{canonical_measures, Measure};
use bergman_core::geometry::{build_lattice, Lattice, LatticeParams};
use bergman_core::weights::WeightModel;

pub fn exp11() -> WeightModel {
    WeightModel::exp(1.0, 1.0, 0.95).expect("valid weight")
}

pub fn table(n_basis: usize) -> MomentTable {
    compute_moments(&exp11(), &KernelParams::with_basis(n_basis)).expect("moments")
}

/// A lattice with a reduced multiplicity sample so setup stays quick.
pub fn lattice(r: f64) -> Lattice {
    let mut p = LatticeParams::new(r, 0.9, 0.95);
    p.multiplicity_samples = 20_000;
    build_lattice(&exp11(), &p, 1).expect("lattice")
}

pub fn measure(name: &str, lat: &Lattice) -> Measure {
    canonical_measures(&exp11(), lat)
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .expect("canonical measure")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_build() {
        let t = super::table(32);
        assert_eq!(t.log_h.len(), 33);
    }
}
