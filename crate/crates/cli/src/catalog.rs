use bergman_core::measures::CANONICAL_MEASURES;
use serde::Serialize;

use crate::config::Task;

#[derive(Debug, Clone, Serialize)]
pub struct Family {
    pub name: &'static str,
    pub label: &'static str,
    pub parameters: &'static [&'static str],
    pub oracle: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Catalog {
    pub weight_families: Vec<Family>,
    /// `kind` tags accepted in `[[measures.custom]]`.
    pub measure_kinds: Vec<Family>,
    pub radial_profiles: Vec<Family>,
    pub canonical_measures: Vec<&'static str>,
    pub tasks: Vec<&'static str>,
}

pub fn list_families() -> Catalog {
    let f = |name, label, parameters, oracle| Family {
        name,
        label,
        parameters,
        oracle,
    };
    Catalog {
        weight_families: vec![
            f("exp", "EXP(A, alpha): phi = A (1 - |z|^2)^(-alpha)", &["amplitude", "exponent", "r_max"], false),
            f("flat", "FLAT oracle: phi = 0, rho = 1, K = (1 - z conj(w))^(-2)", &["r_max"], true),
            f("constant_rho", "constant-rho oracle: phi = |z|^2 / (4 c^2)", &["amplitude", "r_max"], true),
        ],
        measure_kinds: vec![
            f("atomic", "sum of point masses", &["points", "masses"], false),
            f("radial", "g(|w|) dA on |w| <= cutoff", &["profile", "cutoff"], false),
            f("grid", "piecewise-constant density on polar cells", &["cells"], false),
            f("sum", "sum of measures", &["parts"], false),
        ],
        radial_profiles: vec![
            f("constant", "level", &["level"], false),
            f("boundary_power", "level (1 - r)^(-exponent)", &["level", "exponent"], false),
            f("power", "level r^power", &["level", "power"], false),
            f("annulus", "level on inner <= r <= outer", &["level", "inner", "outer"], false),
        ],
        canonical_measures: CANONICAL_MEASURES.to_vec(),
        tasks: Task::ALL.iter().map(|t| t.name()).collect(),
    }
}
