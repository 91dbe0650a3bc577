use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use bergman_core::carleson::{
    averaging_equivalence, carleson_checks, carleson_qlp_check, vanishing_check, CheckContext, EquivalenceReport,
};
use bergman_core::geometry::{build_lattice, Lattice, LatticeParams};
use bergman_core::kernel::{compute_moments, norm_kz, norm_ratio_statistic, reproducing_residual, MomentTable};
use bergman_core::measures::{avg_function, berezin_measure, canonical_measures, field_grid, BaseMeasure, Measure};
use bergman_core::quadrature::halton_disc;
use bergman_core::toeplitz::{compact_tail, schatten_report, spectrum, ToeplitzMatrix};
use bergman_core::weights::{check_membership, WeightModel};
use bergman_core::Complex64;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Task};
use crate::report::{Assertion, Provenance, Relation, RunReport, TaskResult};
use crate::RunError;

/// Halton offset for the covering check, far from the construction's probes.
const COVERING_START: u64 = 1_000_003;
const MEMBERSHIP_SAMPLES: usize = 20_000;

/// Runs every task, writes `report.json` and CSV artifacts into the output
/// directory, and returns the report.
pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let report = execute(cfg, Some(&cfg.output_dir))?;
    std::fs::write(cfg.output_dir.join("report.json"), report.to_json())?;
    Ok(report)
}

/// As [`run`] but touches no files; artifact lists stay empty.
pub fn run_without_artifacts(cfg: &RunConfig) -> Result<RunReport, RunError> {
    execute(cfg, None)
}

fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serialises");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct State<'a> {
    cfg: &'a RunConfig,
    out: Option<&'a Path>,
    weight: WeightModel,
    table: Option<MomentTable>,
    lattice: Option<Lattice>,
    measures: Vec<(String, Measure)>,
}

struct Outcome {
    result: Value,
    assertions: Vec<Assertion>,
    artifacts: Vec<String>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Self {
            result,
            assertions: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let tasks = cfg.ordered_tasks();
    let mut st = State {
        cfg,
        out,
        weight: cfg.weight.build()?,
        table: None,
        lattice: None,
        measures: Vec::new(),
    };
    st.prepare(&tasks)?;

    let mut results = Vec::with_capacity(tasks.len());
    let mut assertions = Vec::new();
    for task in tasks {
        let o = st.run_task(task)?;
        assertions.extend(o.assertions);
        results.push(TaskResult {
            task,
            result: o.result,
            artifacts: o.artifacts,
        });
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(RunReport {
        provenance: Provenance {
            tool: "bergman".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            timestamp,
        },
        config: cfg.clone(),
        passed: assertions.iter().all(|a| a.pass),
        results,
        assertions,
    })
}

pub fn lattice_params(cfg: &RunConfig) -> LatticeParams {
    let mut p = LatticeParams::new(cfg.lattice.r, cfg.lattice.s, cfg.weight.r_max);
    p.point_budget = cfg.lattice.point_budget;
    p.multiplicity_samples = cfg.lattice.multiplicity_samples;
    p
}

/// `index,re,im,rho` per lattice point.
pub fn write_lattice_csv(lat: &Lattice, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "index,re,im,rho")?;
    for (k, (z, rho)) in lat.points.iter().zip(&lat.rhos).enumerate() {
        writeln!(f, "{k},{:.17e},{:.17e},{:.17e}", z.re, z.im, rho)?;
    }
    f.flush()
}

fn finite_max(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

impl State<'_> {
    /// Builds shared inputs in dependency order: weight, then kernel and
    /// lattice, then measures.
    fn prepare(&mut self, tasks: &[Task]) -> Result<(), RunError> {
        let cfg = self.cfg;
        let need_measures = tasks.iter().any(|t| t.needs_measures());
        let canonical_need_lattice = need_measures && !cfg.measures.canonical.is_empty();
        if tasks.iter().any(|t| t.needs_kernel()) {
            self.table = Some(compute_moments(&self.weight, &cfg.kernel).map_err(RunError::task("kernel-verify"))?);
        }
        if tasks.iter().any(|t| t.needs_lattice()) || canonical_need_lattice {
            let lat = build_lattice(&self.weight, &lattice_params(cfg), cfg.seed).map_err(RunError::task("lattice"))?;
            self.lattice = Some(lat);
        }
        if need_measures {
            if let Some(lat) = &self.lattice {
                self.measures = canonical_measures(&self.weight, lat)
                    .into_iter()
                    .filter(|(n, _)| cfg.measures.canonical.contains(n))
                    .collect();
            }
            self.measures
                .extend(cfg.measures.custom.iter().map(|m| (m.name.clone(), m.measure.clone())));
            if let Some(task) = tasks.iter().find(|t| t.needs_measures()) {
                if self.measures.is_empty() {
                    return Err(RunError::Dependency {
                        task: task.name(),
                        what: "at least one measure".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn table(&self) -> &MomentTable {
        self.table.as_ref().expect("kernel prepared")
    }

    fn lattice(&self) -> &Lattice {
        self.lattice.as_ref().expect("lattice prepared")
    }

    fn context(&self) -> Result<CheckContext<'_>, RunError> {
        CheckContext::new(
            self.table(),
            self.lattice(),
            self.cfg.lattice.delta(),
            // the operator holds degrees 0..dim-1
            self.cfg.toeplitz.dim - 1,
            self.cfg.tolerances.ratio_window,
        )
        .map_err(|e| RunError::config("lattice.delta", e))
    }

    fn artifact(&self, o: &mut Outcome, name: String, write: impl FnOnce(&Path) -> Result<(), RunError>) -> Result<(), RunError> {
        if let Some(dir) = self.out {
            write(&dir.join(&name))?;
            o.artifacts.push(name);
        }
        Ok(())
    }

    fn run_task(&self, task: Task) -> Result<Outcome, RunError> {
        match task {
            Task::Membership => self.membership(),
            Task::Lattice => self.lattice_task(),
            Task::KernelVerify => self.kernel_verify(),
            Task::Carleson => self.carleson(),
            Task::Vanishing => self.vanishing(),
            Task::Qlp => self.qlp(),
            Task::Toeplitz => self.toeplitz(),
            Task::Schatten => self.schatten(),
            Task::Tail => self.tail(),
        }
    }

    fn membership(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Membership;
        let rep = check_membership(&self.weight, MEMBERSHIP_SAMPLES, self.cfg.seed).map_err(RunError::task(T.name()))?;
        let mut o = Outcome::new(serde_json::to_value(&rep).expect("serialisable"));
        let name = self.weight.name();
        if !rep.oracle {
            o.assertions
                .push(Assertion::new(T, &name, "weights::laplacian_positive", rep.min_laplacian, Relation::Gt, 0.0));
        }
        let rise = finite_max(rep.l0_decay.windows(2).map(|w| w[1].1 - w[0].1));
        o.assertions
            .push(Assertion::new(T, &name, "weights::lipschitz_tail_non_increasing", rise, Relation::Le, 0.0));
        Ok(o)
    }

    fn lattice_task(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Lattice;
        let lat = self.lattice();
        let samples = halton_disc(self.cfg.lattice.covering_samples, self.weight.r_max, COVERING_START);
        let uncovered = lat.uncovered(&samples).len();
        let violations = lat.separation_violations();
        let mut o = Outcome::new(json!({
            "n_points": lat.len(),
            "multiplicity": lat.multiplicity,
            "rotation": lat.rotation,
            "params": lat.params,
            "covering_samples": samples.len(),
            "uncovered": uncovered,
            "separation_violations": violations,
        }));
        let subject = format!("r = {}, s = {}", lat.params.r, lat.params.s);
        o.assertions
            .push(Assertion::new(T, &subject, "geometry::covering", uncovered as f64, Relation::Eq, 0.0));
        o.assertions
            .push(Assertion::new(T, &subject, "geometry::separation", violations as f64, Relation::Eq, 0.0));
        self.artifact(&mut o, "lattice.csv".into(), |p| Ok(write_lattice_csv(lat, p)?))?;
        Ok(o)
    }

    fn kernel_verify(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::KernelVerify;
        let t = self.table();
        let w = &self.weight;
        let tol = self.cfg.tolerances.kernel_tol;
        let err = RunError::task(T.name());

        let min_second_diff = t
            .log_h
            .windows(3)
            .map(|v| v[0] + v[2] - 2.0 * v[1])
            .fold(f64::INFINITY, f64::min);
        let violation = t.log_convexity_violation();

        let radius = 0.9 * t.resolved_radius(w.r_max, t.n_basis()).min(1.0) * w.r_max;
        let pts = halton_disc(20, radius, self.cfg.seed);
        let mut rkhs: f64 = 0.0;
        for &z in &pts {
            let n = norm_kz(t, z, 2.0).map_err(RunError::task(T.name()))?;
            rkhs = rkhs.max((2.0 * n.log_norm - t.kappa_diag(z).ln() - 2.0 * w.phi(z)).abs());
        }
        let max_degree = 10.min(t.n_basis() - 2);
        let mut reproducing: f64 = 0.0;
        for &z in &pts[..10] {
            for d in 0..=max_degree {
                let mut f = vec![Complex64::new(0.0, 0.0); d + 1];
                f[d] = Complex64::new(1.0, 0.0);
                reproducing = reproducing.max(reproducing_residual(t, &f, z).map_err(RunError::task(T.name()))?);
            }
        }
        let radii: Vec<f64> = (0..40).map(|i| 0.9 * w.r_max * i as f64 / 39.0).collect();
        let ratios = [1.0, 2.0, 4.0]
            .iter()
            .map(|&p| norm_ratio_statistic(t, p, &radii))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;

        let mut o = Outcome::new(json!({
            "n_basis": t.n_basis(),
            "refinement_change": t.refinement_change,
            "min_log_second_difference": min_second_diff,
            "log_convexity_violation": violation,
            "rkhs_identity_max": rkhs,
            "reproducing_residual_max": reproducing,
            "reproducing_max_degree": max_degree,
            "sample_radius": radius,
            "norm_ratio": ratios.iter().map(|r| json!({"p": r.p, "spread": r.spread, "slope": r.slope})).collect::<Vec<_>>(),
        }));
        let name = w.name();
        o.assertions.push(Assertion::new(
            T,
            &name,
            "kernel::moment_log_convexity",
            violation.map_or(0.0, |n| n as f64 + 1.0),
            Relation::Eq,
            0.0,
        ));
        o.assertions.push(Assertion::new(
            T,
            &name,
            "kernel::moment_refinement",
            t.refinement_change,
            Relation::Le,
            t.params.refine_tol,
        ));
        o.assertions
            .push(Assertion::new(T, &name, "kernel::rkhs_identity", rkhs, Relation::Le, tol));
        o.assertions
            .push(Assertion::new(T, &name, "kernel::reproducing", reproducing, Relation::Le, tol));
        for r in &ratios {
            o.assertions.push(Assertion::new(
                T,
                format!("p = {}", r.p),
                "kernel::norm_ratio_window",
                r.spread,
                Relation::Le,
                self.cfg.tolerances.ratio_window,
            ));
        }
        self.artifact(&mut o, "moments.csv".into(), |p| t.export_csv(p).map_err(RunError::task(T.name())))?;
        Ok(o)
    }

    fn equivalence_assertions(&self, task: Task, subject: &str, module: &str, reps: &[EquivalenceReport], o: &mut Outcome) {
        let tol = &self.cfg.tolerances;
        for r in reps {
            let sub = match r.q {
                Some(q) => format!("{subject}, p = {}, q = {q}", r.p),
                None => format!("{subject}, p = {}", r.p),
            };
            o.assertions.push(Assertion::new(
                task,
                &sub,
                &format!("{module}::{}_window", r.label),
                r.ratio_spread,
                Relation::Le,
                tol.ratio_window,
            ));
            o.assertions.push(Assertion::new(
                task,
                &sub,
                &format!("{module}::{}_scaling_drift", r.label),
                r.scaling_drift,
                Relation::Le,
                tol.drift_tol,
            ));
        }
    }

    fn carleson(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Carleson;
        let ctx = self.context()?;
        let spec = &self.cfg.carleson;
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            let checks = carleson_checks(mu, &ctx, &spec.pairs).map_err(RunError::task(T.name()))?;
            let avg = averaging_equivalence(mu, &ctx, &spec.averaging_p, BaseMeasure::Lebesgue)
                .map_err(RunError::task(T.name()))?;
            self.equivalence_assertions(T, name, "carleson", &checks, &mut o);
            self.equivalence_assertions(T, name, "measures", &avg, &mut o);
            for r in &checks {
                if let Some(v) = r.verdicts.iter().find(|v| v.item == "lower_bound_validity") {
                    o.assertions.push(Assertion::new(
                        T,
                        format!("{name}, p = {}, q = {}", r.p, r.q.unwrap_or(r.p)),
                        "carleson::lower_bound_validity",
                        if v.pass { 1.0 } else { 0.0 },
                        Relation::Eq,
                        1.0,
                    ));
                }
            }
            out.push(json!({"measure": name, "checks": checks, "averaging": avg}));
        }
        o.result = json!({ "net_size": ctx.net.len(), "delta": ctx.delta, "measures": out });
        Ok(o)
    }

    fn vanishing(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Vanishing;
        let ctx = self.context()?;
        let spec = &self.cfg.carleson;
        let thresholds = &spec.thresholds;
        let rho_max = self.weight.rho_radial(0.0).max(self.weight.rho_radial(self.weight.r_max));
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            for &(p, q) in &spec.pairs {
                let rep = vanishing_check(mu, &ctx, p, q, thresholds, self.cfg.tolerances.vanish_tol)
                    .map_err(RunError::task(T.name()))?;
                // beyond support + r·ρ_max the disc averages see no mass at all
                let reach = mu.support_radius() + ctx.lat.r() * rho_max;
                for c in rep.curves.iter().filter(|c| c.item != "berezin") {
                    if let Some(worst) = c.profile.iter().filter(|(t, _)| *t > reach).map(|(_, v)| *v).reduce(f64::max) {
                        o.assertions.push(Assertion::new(
                            T,
                            format!("{name}, p = {p}, q = {q}, {}", c.item),
                            "measures::profile_zero_beyond_support",
                            worst,
                            Relation::Eq,
                            0.0,
                        ));
                    }
                }
                let file = format!("vanishing_{name}_p{p}_q{q}.csv");
                self.artifact(&mut o, file, |path| rep.export_csv(path).map_err(RunError::task(T.name())))?;
                out.push(json!({"measure": name, "report": rep}));
            }
        }
        o.result = json!({ "thresholds": thresholds, "measures": out });
        Ok(o)
    }

    fn qlp(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Qlp;
        let ctx = self.context()?;
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            let reps = self
                .cfg
                .carleson
                .qlp_pairs
                .iter()
                .map(|&(p, q)| carleson_qlp_check(mu, &ctx, p, q))
                .collect::<Result<Vec<_>, _>>()
                .map_err(RunError::task(T.name()))?;
            self.equivalence_assertions(T, name, "carleson", &reps, &mut o);
            out.push(json!({"measure": name, "checks": reps}));
        }
        o.result = json!({ "measures": out });
        Ok(o)
    }

    fn toeplitz(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Toeplitz;
        let t = self.table();
        let dim = self.cfg.toeplitz.dim;
        let ctx = self.context()?;
        let window = self.cfg.tolerances.ratio_window;
        let err = || RunError::task(T.name());
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            let m = ToeplitzMatrix::assemble(mu, t, dim).map_err(err())?;
            let spec = spectrum(&m, &self.cfg.toeplitz.p_list).map_err(err())?;
            let berezin_sup = finite_max(berezin_measure(mu, t, &ctx.net).map_err(err())?.values);
            let avg_sup = finite_max(avg_function(mu, &self.weight, ctx.delta, &ctx.net).map_err(err())?.values);
            let scale = m.trace().max(f64::MIN_POSITIVE);
            o.assertions.push(Assertion::new(
                T,
                name,
                "toeplitz::hermitian",
                m.hermitian_defect() / scale,
                Relation::Le,
                1e-12,
            ));
            o.assertions.push(Assertion::new(
                T,
                name,
                "toeplitz::positive_semidefinite",
                spec.min_raw,
                Relation::Ge,
                -1e-10 * spec.operator_norm,
            ));
            o.assertions.push(Assertion::new(
                T,
                name,
                "toeplitz::berezin_below_norm",
                berezin_sup - spec.operator_norm,
                Relation::Le,
                1e-8,
            ));
            o.assertions.push(Assertion::new(
                T,
                name,
                "toeplitz::norm_below_average",
                spec.operator_norm,
                Relation::Le,
                window * avg_sup,
            ));
            let file = format!("eigenvalues_{name}.csv");
            self.artifact(&mut o, file, |p| spec.export_eigenvalues_csv(p).map_err(RunError::task(T.name())))?;
            out.push(json!({
                "measure": name,
                "dim": dim,
                "operator_norm": spec.operator_norm,
                "trace": spec.trace,
                "schatten": spec.schatten,
                "min_raw": spec.min_raw,
                "tail_ratio": spec.tail_ratio,
                "berezin_sup": berezin_sup,
                "avg_sup": avg_sup,
            }));
        }
        o.result = json!({ "net_size": ctx.net.len(), "measures": out });
        Ok(o)
    }

    fn schatten(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Schatten;
        let t = self.table();
        let grid = field_grid(&self.weight);
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            let reps = schatten_report(
                mu,
                &self.weight,
                t,
                self.lattice(),
                self.cfg.lattice.delta(),
                &self.cfg.toeplitz.p_list,
                self.cfg.toeplitz.dim,
                &grid,
            )
            .map_err(RunError::task(T.name()))?;
            self.equivalence_assertions(T, name, "toeplitz", &reps, &mut o);
            out.push(json!({"measure": name, "reports": reps}));
        }
        o.result = json!({ "measures": out });
        Ok(o)
    }

    fn tail(&self) -> Result<Outcome, RunError> {
        const T: Task = Task::Tail;
        let t = self.table();
        let sweep: Vec<f64> = self.cfg.toeplitz.tail_sweep.iter().map(|f| f * self.weight.r_max).collect();
        let mut out = Vec::new();
        let mut o = Outcome::new(Value::Null);
        for (name, mu) in &self.measures {
            let tail = compact_tail(mu, t, self.cfg.toeplitz.dim, &sweep).map_err(RunError::task(T.name()))?;
            let head = tail.first().map_or(0.0, |v| v.1).max(f64::MIN_POSITIVE);
            let rise = finite_max(tail.windows(2).map(|w| (w[1].1 - w[0].1) / head));
            o.assertions.push(Assertion::new(
                T,
                name.as_str(),
                "toeplitz::tail_non_increasing",
                rise,
                Relation::Le,
                1e-10,
            ));
            let support = mu.support_radius();
            if let Some(&(r, v)) = tail.iter().find(|(r, _)| *r >= support) {
                o.assertions.push(Assertion::new(
                    T,
                    format!("{name}, R = {r}"),
                    "toeplitz::tail_zero_beyond_support",
                    v,
                    Relation::Eq,
                    0.0,
                ));
            }
            out.push(json!({"measure": name, "support_radius": support, "tail": tail}));
        }
        o.result = json!({ "measures": out });
        Ok(o)
    }
}
