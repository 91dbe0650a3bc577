//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use bergman_core::kernel::KernelParams;
use bergman_core::measures::{Measure, CANONICAL_MEASURES};
use bergman_core::weights::{make_weight, WeightModel, DEFAULT_R_MAX};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Membership,
    Lattice,
    KernelVerify,
    Carleson,
    Vanishing,
    Qlp,
    Toeplitz,
    Schatten,
    Tail,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Membership,
        Task::Lattice,
        Task::KernelVerify,
        Task::Carleson,
        Task::Vanishing,
        Task::Qlp,
        Task::Toeplitz,
        Task::Schatten,
        Task::Tail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Membership => "membership",
            Task::Lattice => "lattice",
            Task::KernelVerify => "kernel-verify",
            Task::Carleson => "carleson",
            Task::Vanishing => "vanishing",
            Task::Qlp => "qlp",
            Task::Toeplitz => "toeplitz",
            Task::Schatten => "schatten",
            Task::Tail => "tail",
        }
    }

    pub fn needs_kernel(self) -> bool {
        !matches!(self, Task::Membership | Task::Lattice)
    }

    pub fn needs_lattice(self) -> bool {
        matches!(self, Task::Lattice | Task::Carleson | Task::Vanishing | Task::Qlp | Task::Toeplitz | Task::Schatten)
    }

    pub fn needs_measures(self) -> bool {
        matches!(self, Task::Carleson | Task::Vanishing | Task::Qlp | Task::Toeplitz | Task::Schatten | Task::Tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSpec {
    /// `exp`, `flat` or `constant_rho`.
    pub family: String,
    /// A for `exp`, the constant ρ for `constant_rho`.
    pub amplitude: f64,
    pub exponent: f64,
    pub r_max: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            family: "exp".into(),
            amplitude: 1.0,
            exponent: 1.0,
            r_max: DEFAULT_R_MAX,
        }
    }
}

impl WeightSpec {
    pub fn build(&self) -> Result<WeightModel, RunError> {
        make_weight(&self.family, self.amplitude, self.exponent, self.r_max).map_err(|e| RunError::config("weight", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    pub r: f64,
    pub s: f64,
    /// Averaging radius for μ̂_δ; defaults to `r`.
    pub delta: Option<f64>,
    pub point_budget: usize,
    pub multiplicity_samples: usize,
    /// Halton samples used to verify covering (offset from those used in
    /// construction).
    pub covering_samples: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            r: 0.5,
            s: 0.9,
            delta: None,
            point_budget: 50_000,
            multiplicity_samples: 100_000,
            covering_samples: 100_000,
        }
    }
}

impl LatticeSpec {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToeplitzSpec {
    pub dim: usize,
    pub p_list: Vec<f64>,
    /// Truncation radii for the tail task, as fractions of r_max.
    pub tail_sweep: Vec<f64>,
}

impl Default for ToeplitzSpec {
    fn default() -> Self {
        Self {
            dim: bergman_core::toeplitz::DEFAULT_DIM,
            p_list: vec![0.5, 1.0, 2.0],
            tail_sweep: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlesonSpec {
    /// (p, q) with p <= q.
    pub pairs: Vec<(f64, f64)>,
    /// (p, q) with q < p.
    pub qlp_pairs: Vec<(f64, f64)>,
    /// Exponents for the averaging equivalence.
    pub averaging_p: Vec<f64>,
    /// Radii at which the vanishing profiles are sampled.
    pub thresholds: Vec<f64>,
}

impl Default for CarlesonSpec {
    fn default() -> Self {
        Self {
            pairs: vec![(1.0, 1.0), (2.0, 2.0), (1.0, 2.0)],
            qlp_pairs: vec![(2.0, 1.0)],
            averaging_p: vec![0.5, 1.0, 2.0],
            thresholds: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.94],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMeasure {
    pub name: String,
    #[serde(flatten)]
    pub measure: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSpec {
    /// Names from the canonical catalogue.
    pub canonical: Vec<String>,
    pub custom: Vec<NamedMeasure>,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self {
            canonical: CANONICAL_MEASURES.iter().map(|s| s.to_string()).collect(),
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ratio_window: f64,
    pub vanish_tol: f64,
    /// Allowed ratio drift under μ → 10μ.
    pub drift_tol: f64,
    /// RKHS identity and reproducing residual.
    pub kernel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ratio_window: 100.0,
            vanish_tol: 1e-6,
            drift_tol: 1e-6,
            kernel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub weight: WeightSpec,
    pub lattice: LatticeSpec,
    pub kernel: KernelParams,
    pub toeplitz: ToeplitzSpec,
    pub carleson: CarlesonSpec,
    pub measures: MeasureSpec,
    pub tolerances: Tolerances,
    /// Where the report and CSV artifacts go. Not part of the config hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: Vec::new(),
            weight: WeightSpec::default(),
            lattice: LatticeSpec::default(),
            kernel: KernelParams::default(),
            toeplitz: ToeplitzSpec::default(),
            carleson: CarlesonSpec::default(),
            measures: MeasureSpec::default(),
            tolerances: Tolerances::default(),
            output_dir: PathBuf::from("bergman-out"),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), RunError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(RunError::Config(format!("`{field}` must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(msg) => RunError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let w = self.weight.build()?;
        let t = &self.tolerances;
        positive("tolerances.ratio_window", t.ratio_window)?;
        positive("tolerances.vanish_tol", t.vanish_tol)?;
        positive("tolerances.drift_tol", t.drift_tol)?;
        positive("tolerances.kernel_tol", t.kernel_tol)?;
        if t.ratio_window < 1.0 {
            return Err(RunError::Config(format!("`tolerances.ratio_window` must be >= 1, got {}", t.ratio_window)));
        }
        positive("lattice.delta", self.lattice.delta())?;
        if self.kernel.n_basis < 8 {
            return Err(RunError::Config(format!("`kernel.n_basis` must be >= 8, got {}", self.kernel.n_basis)));
        }
        // the operator dimension only matters to tasks that touch measures
        let uses_dim = self.tasks.iter().any(|t| t.needs_measures());
        if uses_dim && (self.toeplitz.dim == 0 || self.toeplitz.dim > self.kernel.n_basis + 1) {
            return Err(RunError::Config(format!(
                "`toeplitz.dim` must lie in 1..={}, got {}",
                self.kernel.n_basis + 1,
                self.toeplitz.dim
            )));
        }
        for p in &self.toeplitz.p_list {
            positive("toeplitz.p_list", *p)?;
        }
        for r in &self.toeplitz.tail_sweep {
            if !(*r > 0.0 && *r <= 1.0) {
                return Err(RunError::Config(format!("`toeplitz.tail_sweep` entries must lie in (0, 1], got {r}")));
            }
        }
        for &(p, q) in &self.carleson.pairs {
            positive("carleson.pairs", p)?;
            positive("carleson.pairs", q)?;
            if p > q {
                return Err(RunError::Config(format!("`carleson.pairs` needs p <= q, got ({p}, {q})")));
            }
        }
        for &(p, q) in &self.carleson.qlp_pairs {
            positive("carleson.qlp_pairs", p)?;
            positive("carleson.qlp_pairs", q)?;
            if q >= p {
                return Err(RunError::Config(format!("`carleson.qlp_pairs` needs q < p, got ({p}, {q})")));
            }
        }
        for r in &self.carleson.thresholds {
            if self.tasks.contains(&Task::Vanishing) && !(*r > 0.0 && *r < w.r_max) {
                return Err(RunError::Config(format!("`carleson.thresholds` entries must lie in (0, r_max), got {r}")));
            }
        }
        for p in &self.carleson.averaging_p {
            positive("carleson.averaging_p", *p)?;
        }
        for name in &self.measures.canonical {
            if !CANONICAL_MEASURES.contains(&name.as_str()) {
                return Err(RunError::Config(format!(
                    "`measures.canonical` has unknown measure `{name}`; known: {}",
                    CANONICAL_MEASURES.join(", ")
                )));
            }
        }
        for m in &self.measures.custom {
            m.measure
                .validate(&w)
                .map_err(|e| RunError::Config(format!("`measures.custom` entry `{}`: {e}", m.name)))?;
        }
        Ok(())
    }

    /// Tasks in execution order, deduplicated.
    pub fn ordered_tasks(&self) -> Vec<Task> {
        let mut tasks = self.tasks.clone();
        tasks.sort();
        tasks.dedup();
        tasks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lattice.delta(), 0.5);
    }

    #[test]
    fn parses_tasks_and_custom_measures() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 3
            tasks = ["toeplitz", "membership", "kernel-verify", "toeplitz"]
            [weight]
            family = "exp"
            amplitude = 2.0
            [[measures.custom]]
            name = "pair"
            kind = "atomic"
            points = [[0.1, 0.0], [0.0, -0.2]]
            masses = [1.0, 0.5]
            [[measures.custom]]
            name = "disc"
            kind = "radial"
            cutoff = 0.5
            profile = { profile = "constant", level = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.ordered_tasks(), vec![Task::Membership, Task::KernelVerify, Task::Toeplitz]);
        assert_eq!(cfg.weight.amplitude, 2.0);
        assert_eq!(cfg.measures.custom.len(), 2);
        assert_eq!(cfg.measures.custom[0].measure.total_mass(), 1.5);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml("tasks = [\"bogus\"]").unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 1"), "{e}");
        let e = RunConfig::from_toml("[tolerances]\nratio_window = -1.0").unwrap_err().to_string();
        assert!(e.contains("tolerances.ratio_window"), "{e}");
        let e = RunConfig::from_toml("[lattice]\nsize = 2").unwrap_err().to_string();
        assert!(e.contains("size"), "{e}");
        let e = RunConfig::from_toml("[measures]\ncanonical = [\"nope\"]").unwrap_err().to_string();
        assert!(e.contains("nope"), "{e}");
        let e = RunConfig::from_toml("[carleson]\npairs = [[2.0, 1.0]]").unwrap_err().to_string();
        assert!(e.contains("carleson.pairs"), "{e}");
        let e = RunConfig::from_toml("[weight]\nfamily = \"gauss\"").unwrap_err().to_string();
        assert!(e.contains("weight") && e.contains("gauss"), "{e}");
    }
}
