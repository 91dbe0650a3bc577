//! Finite positive measures on the truncated disc and the transforms built
//! from them: averaging functions μ̂_r, Berezin transforms μ̃, L^p norms
//! against dA or dλ_ρ = dA/ρ², lattice sums, restriction and decay profiles.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Lattice;
use crate::kernel::{disc_integral, MomentTable};
use crate::quadrature::{cosine_mapped_rule, graded_panels, log_sum_exp, DiscGrid, GridSpec, GridTag};
use crate::toeplitz::{self, ToeplitzMatrix};
use crate::weights::WeightModel;

/// Named radial density profiles g(r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum RadialProfile {
    /// g ≡ level.
    Constant { level: f64 },
    /// level · (1 - r)^(-exponent).
    BoundaryPower { level: f64, exponent: f64 },
    /// level · r^power.
    Power { level: f64, power: f64 },
    /// level on inner <= r <= outer.
    Annulus { level: f64, inner: f64, outer: f64 },
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Constant { level } => level,
            RadialProfile::BoundaryPower { level, exponent } => level * (1.0 - r).powf(-exponent),
            RadialProfile::Power { level, power } => level * r.powf(power),
            RadialProfile::Annulus { level, inner, outer } => {
                if (inner..=outer).contains(&r) {
                    level
                } else {
                    0.0
                }
            }
        }
    }

    fn scaled(&self, c: f64) -> Self {
        let mut out = *self;
        match &mut out {
            RadialProfile::Constant { level }
            | RadialProfile::BoundaryPower { level, .. }
            | RadialProfile::Power { level, .. }
            | RadialProfile::Annulus { level, .. } => *level *= c,
        }
        out
    }

    /// [lo, hi] inside [0, cutoff] on which the profile is smooth and may be
    /// nonzero.
    pub fn smooth_support(&self, cutoff: f64) -> (f64, f64) {
        match *self {
            RadialProfile::Annulus { inner, outer, .. } => (inner.min(cutoff), outer.min(cutoff)),
            _ => (0.0, cutoff),
        }
    }

    fn level(&self) -> f64 {
        match *self {
            RadialProfile::Constant { level }
            | RadialProfile::BoundaryPower { level, .. }
            | RadialProfile::Power { level, .. }
            | RadialProfile::Annulus { level, .. } => level,
        }
    }
}

/// Piecewise-constant density on the polar cells
/// [i R/n_r, (i+1) R/n_r) × [2πj/n_θ, 2π(j+1)/n_θ), zero beyond `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarCells {
    pub radius: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
    pub cutoff: f64,
}

impl PolarCells {
    /// Samples f at cell centres.
    pub fn from_fn(radius: f64, n_r: usize, n_theta: usize, f: impl Fn(Complex64) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_r * n_theta);
        for i in 0..n_r {
            let r = radius * (i as f64 + 0.5) / n_r as f64;
            for j in 0..n_theta {
                let th = TAU * (j as f64 + 0.5) / n_theta as f64;
                values.push(f(Complex64::from_polar(r, th)).max(0.0));
            }
        }
        Self {
            radius,
            n_r,
            n_theta,
            values,
            cutoff: radius,
        }
    }

    pub fn eval(&self, z: Complex64) -> f64 {
        let r = z.norm();
        if r > self.cutoff || r >= self.radius {
            return 0.0;
        }
        let i = ((r / self.radius) * self.n_r as f64) as usize;
        let mut th = z.arg();
        if th < 0.0 {
            th += TAU;
        }
        let j = ((th / TAU) * self.n_theta as f64) as usize % self.n_theta;
        self.values[i.min(self.n_r - 1) * self.n_theta + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    Atomic { points: Vec<Complex64>, masses: Vec<f64> },
    /// g(|w|) dA(w) on |w| <= cutoff.
    Radial { profile: RadialProfile, cutoff: f64 },
    /// Piecewise-constant density times dA.
    Grid { cells: PolarCells },
    Sum { parts: Vec<Measure> },
}

impl Measure {
    pub fn zero() -> Self {
        Measure::Atomic {
            points: Vec::new(),
            masses: Vec::new(),
        }
    }

    pub fn atom(point: Complex64, mass: f64) -> Self {
        Measure::Atomic {
            points: vec![point],
            masses: vec![mass],
        }
    }

    pub fn atoms(points: Vec<Complex64>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::Contract("atom points and masses differ in length".into()));
        }
        if masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Contract("atom masses must be positive and finite".into()));
        }
        Ok(Measure::Atomic { points, masses })
    }

    pub fn radial(profile: RadialProfile, cutoff: f64) -> Self {
        Measure::Radial { profile, cutoff }
    }

    /// Checks that no mass sits beyond the truncated disc.
    pub fn validate(&self, w: &WeightModel) -> Result<()> {
        let s = self.support_radius();
        if s > w.r_max * (1.0 + 1e-12) {
            return Err(Error::Contract(format!(
                "measure support radius {s} exceeds r_max = {}",
                w.r_max
            )));
        }
        Ok(())
    }

    /// c·μ.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Measure::Atomic { points, masses } => Measure::Atomic {
                points: points.clone(),
                masses: masses.iter().map(|m| m * c).collect(),
            },
            Measure::Radial { profile, cutoff } => Measure::Radial {
                profile: profile.scaled(c),
                cutoff: *cutoff,
            },
            Measure::Grid { cells } => Measure::Grid {
                cells: PolarCells {
                    values: cells.values.iter().map(|v| v * c).collect(),
                    ..cells.clone()
                },
            },
            Measure::Sum { parts } => Measure::Sum {
                parts: parts.iter().map(|p| p.scaled(c)).collect(),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Measure::Atomic { masses, .. } => masses.is_empty(),
            Measure::Radial { profile, cutoff } => profile.level() == 0.0 || *cutoff <= 0.0,
            Measure::Grid { cells } => cells.values.iter().all(|v| *v == 0.0) || cells.cutoff <= 0.0,
            Measure::Sum { parts } => parts.iter().all(Measure::is_zero),
        }
    }

    pub fn is_radial(&self) -> bool {
        match self {
            Measure::Atomic { masses, points } => masses.is_empty() || points.iter().all(|p| *p == Complex64::new(0.0, 0.0)),
            Measure::Radial { .. } => true,
            Measure::Grid { .. } => false,
            Measure::Sum { parts } => parts.iter().all(Measure::is_radial),
        }
    }

    pub fn has_density(&self) -> bool {
        match self {
            Measure::Atomic { .. } => false,
            Measure::Radial { .. } | Measure::Grid { .. } => !self.is_zero(),
            Measure::Sum { parts } => parts.iter().any(Measure::has_density),
        }
    }

    /// Largest |w| carrying mass.
    pub fn support_radius(&self) -> f64 {
        match self {
            Measure::Atomic { points, .. } => points.iter().map(|p| p.norm()).fold(0.0, f64::max),
            Measure::Radial { profile, cutoff } => match *profile {
                RadialProfile::Annulus { outer, .. } => outer.min(*cutoff),
                _ => *cutoff,
            },
            Measure::Grid { cells } => cells.cutoff.min(cells.radius),
            Measure::Sum { parts } => parts.iter().map(Measure::support_radius).fold(0.0, f64::max),
        }
    }

    /// μ(D), D the whole disc.
    pub fn total_mass(&self) -> f64 {
        match self {
            Measure::Atomic { masses, .. } => masses.iter().sum(),
            Measure::Radial { profile, cutoff } => {
                let (lo, hi) = profile.smooth_support(*cutoff);
                cosine_mapped_rule(lo, hi, 64)
                    .iter()
                    .map(|(r, wt)| 2.0 * wt * r * profile.eval(*r))
                    .sum()
            }
            Measure::Grid { cells } => {
                let mut total = 0.0;
                let dr = cells.radius / cells.n_r as f64;
                for i in 0..cells.n_r {
                    let lo = i as f64 * dr;
                    let hi = ((i + 1) as f64 * dr).min(cells.cutoff);
                    if hi <= lo {
                        break;
                    }
                    let area = (hi * hi - lo * lo) / cells.n_theta as f64;
                    total += area * cells.values[i * cells.n_theta..(i + 1) * cells.n_theta].iter().sum::<f64>();
                }
                total
            }
            Measure::Sum { parts } => parts.iter().map(Measure::total_mass).sum(),
        }
    }

    /// Density of the absolutely continuous part at z.
    pub fn density(&self, z: Complex64) -> f64 {
        match self {
            Measure::Atomic { .. } => 0.0,
            Measure::Radial { profile, cutoff } => {
                let r = z.norm();
                if r <= *cutoff {
                    profile.eval(r)
                } else {
                    0.0
                }
            }
            Measure::Grid { cells } => cells.eval(z),
            Measure::Sum { parts } => parts.iter().map(|p| p.density(z)).sum(),
        }
    }

    /// All atoms of the measure, in order.
    pub fn atom_list(&self) -> Vec<(Complex64, f64)> {
        match self {
            Measure::Atomic { points, masses } => points.iter().copied().zip(masses.iter().copied()).collect(),
            Measure::Sum { parts } => parts.iter().flat_map(Measure::atom_list).collect(),
            _ => Vec::new(),
        }
    }

    /// The non-atomic parts, flattened.
    pub fn density_parts(&self) -> Vec<&Measure> {
        match self {
            Measure::Atomic { .. } => Vec::new(),
            Measure::Radial { .. } | Measure::Grid { .. } => vec![self],
            Measure::Sum { parts } => parts.iter().flat_map(Measure::density_parts).collect(),
        }
    }

    /// μ(D(c, radius)).
    pub fn disc_mass(&self, c: Complex64, radius: f64) -> f64 {
        match self {
            Measure::Atomic { points, masses } => points
                .iter()
                .zip(masses)
                .filter(|(p, _)| (**p - c).norm() < radius)
                .map(|(_, m)| m)
                .sum(),
            Measure::Radial { .. } | Measure::Grid { .. } => {
                if self.is_zero() || c.norm() - radius > self.support_radius() {
                    return 0.0;
                }
                disc_integral(c, radius, 24, 48, |v| self.density(v))
            }
            Measure::Sum { parts } => parts.iter().map(|p| p.disc_mass(c, radius)).sum(),
        }
    }

    pub fn export_atoms_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["re", "im", "mass"])?;
        for (p, m) in self.atom_list() {
            wtr.write_record([format!("{:.17e}", p.re), format!("{:.17e}", p.im), format!("{m:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn import_atoms_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut points, mut masses) = (Vec::new(), Vec::new());
        for rec in rdr.deserialize() {
            let (re, im, m): (f64, f64, f64) = rec?;
            points.push(Complex64::new(re, im));
            masses.push(m);
        }
        Measure::atoms(points, masses)
    }
}

/// μ_R(E) = μ(E ∩ {|w| <= R}).
pub fn restrict_measure(mu: &Measure, radius: f64) -> Measure {
    if radius >= mu.support_radius() {
        return mu.clone();
    }
    match mu {
        Measure::Atomic { points, masses } => {
            let (p, m): (Vec<_>, Vec<_>) = points
                .iter()
                .zip(masses)
                .filter(|(p, _)| p.norm() <= radius)
                .map(|(p, m)| (*p, *m))
                .unzip();
            Measure::Atomic { points: p, masses: m }
        }
        Measure::Radial { profile, cutoff } => Measure::Radial {
            profile: *profile,
            cutoff: cutoff.min(radius),
        },
        Measure::Grid { cells } => Measure::Grid {
            cells: PolarCells {
                cutoff: cells.cutoff.min(radius),
                ..cells.clone()
            },
        },
        Measure::Sum { parts } => Measure::Sum {
            parts: parts.iter().map(|p| restrict_measure(p, radius)).collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Avg { r: f64 },
    Berezin,
    Custom { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformField {
    pub points: Vec<Complex64>,
    pub values: Vec<f64>,
    pub kind: FieldKind,
    /// Set when the points are the nodes of a quadrature grid.
    pub grid: Option<GridTag>,
}

impl TransformField {
    pub fn map(&self, name: &str, f: impl Fn(Complex64, f64) -> f64) -> Self {
        Self {
            points: self.points.clone(),
            values: self.points.iter().zip(&self.values).map(|(&z, &v)| f(z, v)).collect(),
            kind: FieldKind::Custom { name: name.into() },
            grid: self.grid,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["re", "im", "value"])?;
        for (z, v) in self.points.iter().zip(&self.values) {
            wtr.write_record([format!("{:.17e}", z.re), format!("{:.17e}", z.im), format!("{v:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Where a transform is sampled.
#[derive(Debug, Clone, Copy)]
pub enum Samples<'a> {
    Grid(&'a DiscGrid),
    Points(&'a [Complex64]),
}

impl<'a> From<&'a DiscGrid> for Samples<'a> {
    fn from(g: &'a DiscGrid) -> Self {
        Samples::Grid(g)
    }
}

impl<'a> From<&'a [Complex64]> for Samples<'a> {
    fn from(p: &'a [Complex64]) -> Self {
        Samples::Points(p)
    }
}

impl<'a> From<&'a Vec<Complex64>> for Samples<'a> {
    fn from(p: &'a Vec<Complex64>) -> Self {
        Samples::Points(p)
    }
}

impl Samples<'_> {
    fn len(&self) -> usize {
        match self {
            Samples::Grid(g) => g.len(),
            Samples::Points(p) => p.len(),
        }
    }

    fn points(&self) -> Vec<Complex64> {
        match self {
            Samples::Grid(g) => g.points(),
            Samples::Points(p) => p.to_vec(),
        }
    }

    fn tag(&self) -> Option<GridTag> {
        match self {
            Samples::Grid(g) => Some(g.tag()),
            Samples::Points(_) => None,
        }
    }

    /// Evaluates `f` once per ring and replicates when `radial` and on a grid.
    fn eval(&self, radial: bool, f: impl Fn(Complex64) -> Result<f64> + Sync) -> Result<Vec<f64>> {
        match self {
            Samples::Grid(g) if radial => {
                let per_ring: Vec<f64> = (0..g.n_rings())
                    .into_par_iter()
                    .map(|i| f(Complex64::new(g.ring_radius(i), 0.0)))
                    .collect::<Result<_>>()?;
                Ok(per_ring
                    .iter()
                    .flat_map(|v| std::iter::repeat(*v).take(g.n_angles()))
                    .collect())
            }
            _ => self.points().into_par_iter().map(&f).collect(),
        }
    }
}

/// Standard grid on which transform fields are sampled for L^p norms.
pub fn field_grid(w: &WeightModel) -> DiscGrid {
    DiscGrid::new(GridSpec {
        upper: w.r_max,
        levels: 10,
        order: 16,
        n_angles: 128,
    })
}

/// μ̂_r(z) = μ(D^r(z)) / ρ(z)².
pub fn avg_function<'a>(mu: &Measure, w: &WeightModel, r: f64, pts: impl Into<Samples<'a>>) -> Result<TransformField> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::param("r", r, "0 < r <= 1"));
    }
    let pts = pts.into();
    let mut values = vec![0.0; pts.len()];
    let atoms = mu.atom_list();
    if !atoms.is_empty() {
        let atomic = Measure::Atomic {
            points: atoms.iter().map(|a| a.0).collect(),
            masses: atoms.iter().map(|a| a.1).collect(),
        };
        let v = pts.eval(atomic.is_radial(), |z| {
            let rho = w.rho(z);
            Ok(atomic.disc_mass(z, r * rho) / (rho * rho))
        })?;
        values.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    for part in mu.density_parts() {
        let v = pts.eval(part.is_radial(), |z| {
            let rho = w.rho(z);
            Ok(part.disc_mass(z, r * rho) / (rho * rho))
        })?;
        values.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    Ok(TransformField {
        points: pts.points(),
        values,
        kind: FieldKind::Avg { r },
        grid: pts.tag(),
    })
}

/// λ_n = (2/h_n) ∫ r^{2n+1} g(r) e^{-2φ(r)} dr for a radial density, n < dim.
pub fn radial_eigenvalues(profile: &RadialProfile, cutoff: f64, t: &MomentTable, dim: usize) -> Vec<f64> {
    // the rule ends at the cutoff and at any jump of the profile
    let (lo, hi) = profile.smooth_support(cutoff);
    let (nodes, weights) = if lo == 0.0 && hi >= t.weight.r_max {
        (t.rule.nodes.clone(), t.rule.weights.clone())
    } else {
        graded_panels(lo, hi, t.params.panel_levels, t.params.panel_order)
    };
    let w = &t.weight;
    let base: Vec<(f64, f64)> = nodes
        .iter()
        .zip(&weights)
        .filter_map(|(&r, &wt)| {
            let g = profile.eval(r);
            (g > 0.0).then(|| (r.ln(), wt.ln() + g.ln() - 2.0 * w.phi_radial(r)))
        })
        .collect();
    (0..dim.min(t.n_basis() + 1))
        .map(|n| {
            if base.is_empty() {
                return 0.0;
            }
            let k = (2 * n + 1) as f64;
            let lg = std::f64::consts::LN_2 + log_sum_exp(base.iter().map(|(lr, b)| b + k * lr));
            (lg - t.log_h[n]).exp()
        })
        .collect()
}

/// Σ λ_n |z|^{2n}/h_n / Σ |z|^{2n}/h_n over n < λ.len().
pub(crate) fn diagonal_berezin(lambda: &[f64], t: &MomentTable, z: Complex64) -> f64 {
    let r2 = z.norm_sqr();
    if r2 == 0.0 {
        return lambda.first().copied().unwrap_or(0.0);
    }
    let lr = r2.ln();
    let logs: Vec<f64> = (0..lambda.len()).map(|n| n as f64 * lr - t.log_h[n]).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (l, lam) in logs.iter().zip(lambda) {
        let u = (l - m).exp();
        num += lam * u;
        den += u;
    }
    num / den
}

/// μ̃(z) = ∫ |κ(w, z)|² / κ(z, z) dμ(w), with κ the degree-n_basis kernel.
/// Atom pairs whose kernel series is not resolved raise a truncation error.
pub fn berezin_measure<'a>(mu: &Measure, t: &MomentTable, pts: impl Into<Samples<'a>>) -> Result<TransformField> {
    mu.validate(&t.weight)?;
    let pts = pts.into();
    let atoms = mu.atom_list();
    let tol = t.params.tail_tol;
    let reach = pts.points().iter().map(|z| z.norm()).fold(0.0, f64::max);
    for &(a, _) in &atoms {
        let modulus = a.norm() * reach;
        let tail = t.tail_bound(modulus);
        if !(tail <= tol) {
            return Err(Error::Truncation {
                n_basis: t.n_basis(),
                modulus,
                tail,
            });
        }
    }
    let mut values = match pts {
        Samples::Grid(g) if !atoms.is_empty() => atoms_berezin_on_grid(&atoms, t, g),
        _ => pts.eval(atoms.iter().all(|(a, _)| a.norm() == 0.0), |z| {
            let s: f64 = atoms.iter().map(|&(a, m)| m * t.kappa(a, z).norm_sqr()).sum();
            Ok(s / t.kappa_diag(z))
        })?,
    };
    for part in mu.density_parts() {
        let extra = density_berezin(part, t, pts)?;
        values.iter_mut().zip(extra).for_each(|(v, e)| *v += e);
    }
    Ok(TransformField {
        points: pts.points(),
        values,
        kind: FieldKind::Berezin,
        grid: pts.tag(),
    })
}

/// Atom part of μ̃ on a polar grid: one ring FFT per (atom, ring).
fn atoms_berezin_on_grid(atoms: &[(Complex64, f64)], t: &MomentTable, g: &DiscGrid) -> Vec<f64> {
    let m = g.n_angles();
    let rows: Vec<Vec<f64>> = (0..g.n_rings())
        .into_par_iter()
        .map(|ring| {
            let r = g.ring_radius(ring);
            let mut acc = vec![0.0; m];
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for &(a, mass) in atoms {
                t.ring_kappa(a, r, &mut buf);
                acc.iter_mut().zip(&buf).for_each(|(s, k)| *s += mass * k.norm_sqr());
            }
            let kzz = t.kappa_diag(Complex64::new(r, 0.0));
            acc.iter_mut().for_each(|s| *s /= kzz);
            acc
        })
        .collect();
    rows.concat()
}

fn density_berezin(part: &Measure, t: &MomentTable, pts: Samples<'_>) -> Result<Vec<f64>> {
    match part {
        Measure::Radial { profile, cutoff } => {
            let lambda = radial_eigenvalues(profile, *cutoff, t, t.n_basis() + 1);
            pts.eval(true, |z| Ok(diagonal_berezin(&lambda, t, z)))
        }
        Measure::Grid { .. } => {
            let m = ToeplitzMatrix::assemble(part, t, t.n_basis() + 1)?;
            match pts {
                Samples::Grid(g) => Ok(toeplitz::operator_berezin_field(&m, t, g).values),
                Samples::Points(p) => p.iter().map(|&z| toeplitz::operator_berezin(&m, t, z)).collect(),
            }
        }
        _ => unreachable!("density_parts only yields densities"),
    }
}

/// Berezin transform of a density f, i.e. of the measure f dA.
pub fn berezin_function<'a>(f: &Measure, t: &MomentTable, pts: impl Into<Samples<'a>>) -> Result<TransformField> {
    if !f.atom_list().is_empty() {
        return Err(Error::Contract("berezin_function takes a density, not atoms".into()));
    }
    berezin_measure(f, t, pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMeasure {
    /// dA = dx dy / π.
    Lebesgue,
    /// dλ_ρ = dA / ρ².
    LambdaRho,
}

/// (∫ field^p dbase)^{1/p} over the truncated disc; p = ∞ gives the sup.
pub fn lp_norm(field: &TransformField, p: f64, against: BaseMeasure, grid: &DiscGrid, w: &WeightModel) -> Result<f64> {
    if field.grid != Some(grid.tag()) || field.values.len() != grid.len() {
        return Err(Error::Contract("field is not sampled on the quadrature grid".into()));
    }
    if !(p > 0.0) {
        return Err(Error::param("p", p, "p > 0"));
    }
    if p.is_infinite() {
        return Ok(field.max());
    }
    let m = grid.n_angles();
    let mut total = 0.0;
    for ring in 0..grid.n_rings() {
        let mut s = 0.0;
        for v in &field.values[ring * m..(ring + 1) * m] {
            if *v > 0.0 {
                s += v.powf(p);
            }
        }
        let mut wt = grid.ring_weight(ring);
        if against == BaseMeasure::LambdaRho {
            let rho = w.rho_radial(grid.ring_radius(ring));
            wt /= rho * rho;
        }
        total += wt * s;
    }
    Ok(total.powf(1.0 / p))
}

/// (Σ_k [μ̂_r(a_k) ρ(a_k)^{t_exp}]^p)^{1/p} with r the lattice scale; p = ∞
/// gives the sup.
pub fn lattice_sum(mu: &Measure, w: &WeightModel, lat: &Lattice, p: f64, t_exp: f64) -> Result<f64> {
    let terms = lattice_terms(mu, w, lat, t_exp)?;
    Ok(lp_of(&terms, p))
}

/// μ̂_r(a_k) ρ(a_k)^{t_exp} for every lattice point.
pub fn lattice_terms(mu: &Measure, w: &WeightModel, lat: &Lattice, t_exp: f64) -> Result<Vec<f64>> {
    let field = avg_function(mu, w, lat.r(), &lat.points)?;
    Ok(field
        .values
        .iter()
        .zip(&lat.rhos)
        .map(|(v, rho)| v * rho.powf(t_exp))
        .collect())
}

pub(crate) fn lp_of(terms: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return terms.iter().copied().fold(0.0, f64::max);
    }
    terms.iter().filter(|v| **v > 0.0).map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
}

/// (t, sup_{|z| > t} value) for each threshold.
pub fn decay_profile(field: &TransformField, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    thresholds
        .iter()
        .map(|&t| {
            let mut any = false;
            let mut sup = 0.0f64;
            for (z, v) in field.points.iter().zip(&field.values) {
                if z.norm() > t {
                    any = true;
                    sup = sup.max(*v);
                }
            }
            if any {
                Ok((t, sup))
            } else {
                Err(Error::EmptyBand { threshold: t })
            }
        })
        .collect()
}

/// The five reference measures: an atom cluster, the uniform density, a
/// boundary-concentrated density (1-r)^(-1/2), unit-average atoms on the 50
/// lattice points nearest the origin, and a mixture.
pub fn canonical_measures(w: &WeightModel, lat: &Lattice) -> Vec<(String, Measure)> {
    let center = Complex64::new(0.4, 0.1);
    let rc = w.rho(center);
    let mut cluster_pts = vec![center];
    for k in 0..11 {
        let step = if k % 2 == 0 { 0.4 } else { 0.8 };
        cluster_pts.push(center + Complex64::from_polar(step * rc, TAU * k as f64 / 11.0));
    }
    let cluster_mass: Vec<f64> = cluster_pts.iter().map(|p| w.rho(*p).powi(2)).collect();
    let cluster = Measure::Atomic {
        points: cluster_pts,
        masses: cluster_mass,
    };
    let uniform = Measure::radial(RadialProfile::Constant { level: 1.0 }, w.r_max);
    let boundary = Measure::radial(
        RadialProfile::BoundaryPower {
            level: 1.0,
            exponent: 0.5,
        },
        w.r_max,
    );
    let mut order: Vec<usize> = (0..lat.len()).collect();
    order.sort_by(|&a, &b| lat.points[a].norm().total_cmp(&lat.points[b].norm()).then(a.cmp(&b)));
    let chosen: Vec<usize> = order.into_iter().take(50).collect();
    let lattice_atoms = Measure::Atomic {
        points: chosen.iter().map(|&i| lat.points[i]).collect(),
        masses: chosen.iter().map(|&i| lat.rhos[i] * lat.rhos[i]).collect(),
    };
    let mixed = Measure::Sum {
        parts: vec![cluster.clone(), boundary.scaled(0.5)],
    };
    vec![
        ("atom_cluster".into(), cluster),
        ("uniform".into(), uniform),
        ("boundary_sqrt".into(), boundary),
        ("lattice_atoms".into(), lattice_atoms),
        ("mixed".into(), mixed),
    ]
}

pub const CANONICAL_MEASURES: [&str; 5] = ["atom_cluster", "uniform", "boundary_sqrt", "lattice_atoms", "mixed"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lattice, LatticeParams};
    use crate::kernel::{compute_moments, KernelParams};

    fn setup() -> (WeightModel, MomentTable) {
        let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
        let t = compute_moments(&w, &KernelParams::default()).unwrap();
        (w, t)
    }

    #[test]
    fn annulus_mass_and_flat_eigenvalues_respect_the_jumps() {
        let mu = Measure::radial(RadialProfile::Annulus { level: 3.0, inner: 0.3, outer: 0.7 }, 0.95);
        assert!((mu.total_mass() - 3.0 * (0.49 - 0.09)).abs() < 1e-13);
        // flat weight: λ_n = 3 (0.7^{2n+2} - 0.3^{2n+2})
        let t = compute_moments(&WeightModel::flat(1.0).unwrap(), &KernelParams::default()).unwrap();
        let lam = radial_eigenvalues(&RadialProfile::Annulus { level: 3.0, inner: 0.3, outer: 0.7 }, 0.95, &t, 40);
        for (n, l) in lam.iter().enumerate() {
            let k = 2 * n as i32 + 2;
            let exact = 3.0 * (0.7f64.powi(k) - 0.3f64.powi(k));
            assert!((l - exact).abs() <= 1e-12 * exact, "n = {n}: {l} vs {exact}");
        }
    }

    #[test]
    fn avg_of_atom_at_origin() {
        let (w, _) = setup();
        let mu = Measure::atom(Complex64::new(0.0, 0.0), 0.3);
        let f = avg_function(&mu, &w, 0.25, &vec![Complex64::new(0.0, 0.0)]).unwrap();
        assert!((f.values[0] - 4.0 * 0.3).abs() < 1e-14);
        let z = avg_function(&Measure::zero(), &w, 0.25, &vec![Complex64::new(0.1, 0.0)]).unwrap();
        assert_eq!(z.values[0], 0.0);
    }

    #[test]
    fn transforms_are_linear() {
        let (w, t) = setup();
        let mu = Measure::Sum {
            parts: vec![
                Measure::atoms(vec![Complex64::new(0.2, 0.1), Complex64::new(-0.3, 0.4)], vec![0.5, 1.5]).unwrap(),
                Measure::radial(RadialProfile::Power { level: 2.0, power: 2.0 }, 0.9),
            ],
        };
        let pts = vec![Complex64::new(0.1, 0.2), Complex64::new(0.6, -0.1), Complex64::new(-0.3, 0.35)];
        let a1 = avg_function(&mu, &w, 0.3, &pts).unwrap();
        let a3 = avg_function(&mu.scaled(3.0), &w, 0.3, &pts).unwrap();
        let b1 = berezin_measure(&mu, &t, &pts).unwrap();
        let b3 = berezin_measure(&mu.scaled(3.0), &t, &pts).unwrap();
        for i in 0..pts.len() {
            assert!((a3.values[i] - 3.0 * a1.values[i]).abs() <= 1e-13 * a3.values[i]);
            assert!((b3.values[i] - 3.0 * b1.values[i]).abs() <= 1e-13 * b3.values[i]);
        }
    }

    #[test]
    fn berezin_of_atom_at_origin() {
        let (w, t) = setup();
        let mu = Measure::atom(Complex64::new(0.0, 0.0), 1.0);
        let f = berezin_measure(&mu, &t, &vec![Complex64::new(0.0, 0.0)]).unwrap();
        let expected = (-2.0 * w.phi_radial(0.0) - t.log_h[0]).exp();
        assert!((f.values[0] / expected - 1.0).abs() < 1e-13);
    }

    #[test]
    fn berezin_of_area_is_one_inside() {
        let (w, t) = setup();
        let one = Measure::radial(RadialProfile::Constant { level: 1.0 }, w.r_max);
        let pts: Vec<Complex64> = (0..20).map(|i| Complex64::from_polar(0.8 * 0.95 * i as f64 / 19.0, 0.3 * i as f64)).collect();
        let f = berezin_function(&one, &t, &pts).unwrap();
        for v in &f.values {
            assert!((v - 1.0).abs() <= 1e-6, "{v}");
        }
    }

    #[test]
    fn grid_density_berezin_agrees_with_radial_path() {
        let (w, t) = setup();
        let cells = PolarCells::from_fn(w.r_max, 400, 16, |z| 1.0 + z.norm_sqr());
        let grid_mu = Measure::Grid { cells };
        let pts = vec![Complex64::new(0.2, 0.1), Complex64::new(0.0, 0.5)];
        let g = berezin_measure(&grid_mu, &t, &pts).unwrap();
        let radial = Measure::radial(RadialProfile::Power { level: 1.0, power: 2.0 }, w.r_max);
        let one = Measure::radial(RadialProfile::Constant { level: 1.0 }, w.r_max);
        let r = berezin_measure(&Measure::Sum { parts: vec![one, radial] }, &t, &pts).unwrap();
        for (a, b) in g.values.iter().zip(&r.values) {
            assert!((a / b - 1.0).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn lp_norm_basics() {
        let (w, _) = setup();
        let grid = field_grid(&w);
        let ones = TransformField {
            points: grid.points(),
            values: vec![1.0; grid.len()],
            kind: FieldKind::Custom { name: "one".into() },
            grid: Some(grid.tag()),
        };
        for p in [0.5, 1.0, 2.0] {
            let n = lp_norm(&ones, p, BaseMeasure::Lebesgue, &grid, &w).unwrap();
            assert!((n - (0.95f64 * 0.95).powf(1.0 / p)).abs() < 1e-12);
            let twice = ones.map("two", |_, v| 2.0 * v);
            let n2 = lp_norm(&twice, p, BaseMeasure::Lebesgue, &grid, &w).unwrap();
            assert!((n2 - 2.0 * n).abs() < 1e-12);
        }
        let zero = ones.map("zero", |_, _| 0.0);
        assert_eq!(lp_norm(&zero, 1.0, BaseMeasure::LambdaRho, &grid, &w).unwrap(), 0.0);
        let off = TransformField { grid: None, ..ones };
        assert!(matches!(lp_norm(&off, 1.0, BaseMeasure::Lebesgue, &grid, &w), Err(Error::Contract(_))));
    }

    #[test]
    fn restriction_and_profiles() {
        let (w, _) = setup();
        let mu = Measure::Sum {
            parts: vec![
                Measure::atoms(vec![Complex64::new(0.1, 0.0), Complex64::new(0.0, 0.45)], vec![1.0, 2.0]).unwrap(),
                Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.5),
            ],
        };
        assert_eq!(restrict_measure(&mu, 0.6), mu);
        assert!(restrict_measure(&mu, 1e-3).total_mass() < 2e-6);
        let atoms_only = Measure::atoms(vec![Complex64::new(0.1, 0.0)], vec![1.0]).unwrap();
        assert!(restrict_measure(&atoms_only, 1e-3).is_zero());
        let mut last = 0.0;
        for i in 1..=10 {
            let m = restrict_measure(&mu, 0.05 * i as f64).total_mass();
            assert!(m >= last);
            last = m;
        }
        let grid = field_grid(&w);
        let f = avg_function(&mu, &w, 0.25, &grid).unwrap();
        let rho_max = w.rho_radial(0.0);
        let prof = decay_profile(&f, &[0.2, 0.5 + 0.25 * rho_max + 1e-9, 0.9]).unwrap();
        assert!(prof[0].1 > 0.0);
        assert_eq!(prof[1].1, 0.0);
        assert!(matches!(decay_profile(&f, &[0.99]), Err(Error::EmptyBand { .. })));
    }

    #[test]
    fn lattice_sum_of_single_atom() {
        let (w, _) = setup();
        let mut params = LatticeParams::new(0.5, 0.9, 0.95);
        params.multiplicity_samples = 1000;
        let lat = build_lattice(&w, &params, 0).unwrap();
        let a = lat.points[0];
        let mu = Measure::atom(a, 0.7);
        let covering: Vec<usize> = (0..lat.len()).filter(|&k| (lat.points[k] - a).norm() < lat.r() * lat.rhos[k]).collect();
        let expected: f64 = covering.iter().map(|&k| 0.7 / lat.rhos[k].powi(2) * lat.rhos[k].powf(1.0)).sum();
        let got = lattice_sum(&mu, &w, &lat, 1.0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
        assert_eq!(lattice_sum(&Measure::zero(), &w, &lat, 2.0, 1.0).unwrap(), 0.0);
        let scaled = lattice_sum(&mu.scaled(5.0), &w, &lat, 2.0, 1.0).unwrap();
        assert!((scaled - 5.0 * lattice_sum(&mu, &w, &lat, 2.0, 1.0).unwrap()).abs() < 1e-12 * scaled);
    }

    #[test]
    fn atoms_csv_round_trip() {
        let mu = Measure::atoms(vec![Complex64::new(0.1, -0.2), Complex64::new(0.3, 0.0)], vec![1.5, 0.25]).unwrap();
        let dir = std::env::temp_dir().join(format!("bergman-atoms-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("atoms.csv");
        mu.export_atoms_csv(&path).unwrap();
        assert_eq!(Measure::import_atoms_csv(&path).unwrap(), mu);
        std::fs::remove_dir_all(&dir).ok();
    }
}
