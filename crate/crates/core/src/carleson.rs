//! Sampled equivalence checks for Carleson embeddings A^p_φ → L^q_μ, plus
//! the test-function apparatus: atomic sums of normalized kernels and
//! random-sign probes.
//!
//! Every check reports several quantities that should be comparable up to
//! constants. Only their mutual ratios are judged; suprema are sampled and
//! therefore lower bounds of the true ones.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{radial_angular_samples, Lattice};
use crate::kernel::{horner, normalized_kernel, MomentTable};
use crate::measures::{
    avg_function, berezin_measure, decay_profile, diagonal_berezin, field_grid, lattice_terms, lp_norm, lp_of,
    radial_eigenvalues, BaseMeasure, Measure, TransformField,
};
use crate::quadrature::{fft_plan, DiscGrid, GridSpec};
use crate::weights::WeightModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub item: String,
    pub pass: bool,
    pub detail: String,
}

/// Quantities that should agree up to constants, with their ratios and how
/// those ratios move under μ → c·μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub label: String,
    pub p: f64,
    pub q: Option<f64>,
    pub quantities: Vec<Quantity>,
    /// ratios[i][j] = value_i / value_j (1 when both vanish).
    pub ratios: Vec<Vec<f64>>,
    /// max / min over the quantities; 1 when all vanish, infinite when only
    /// some do.
    pub ratio_spread: f64,
    /// max relative change of a pairwise ratio under μ → c·μ.
    pub scaling_drift: f64,
    pub verdicts: Vec<Verdict>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else {
        a / b
    }
}

impl EquivalenceReport {
    /// `values` for μ, `scaled` for `scale`·μ. All quantities are
    /// 1-homogeneous, so ratios should not move.
    pub fn new(label: &str, p: f64, q: Option<f64>, names: &[&str], values: Vec<f64>, scaled: Vec<f64>, scale: f64) -> Self {
        debug_assert_eq!(names.len(), values.len());
        let n = values.len();
        let ratios: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| ratio(values[i], values[j])).collect()).collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio_spread = if max == 0.0 { 1.0 } else { max / min };
        let mut drift = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let before = ratios[i][j];
                let after = ratio(scaled[i], scaled[j]);
                let d = if before == after {
                    0.0
                } else if before.is_finite() && before > 0.0 {
                    (after / before - 1.0).abs()
                } else {
                    f64::INFINITY
                };
                drift = drift.max(d);
            }
        }
        let homogeneity = values
            .iter()
            .zip(&scaled)
            .map(|(v, s)| if *v == 0.0 { if *s == 0.0 { 0.0 } else { f64::INFINITY } } else { (s / (scale * v) - 1.0).abs() })
            .fold(0.0, f64::max);
        let mut out = Self {
            label: label.into(),
            p,
            q,
            quantities: names
                .iter()
                .zip(&values)
                .map(|(n, v)| Quantity {
                    name: (*n).into(),
                    value: *v,
                })
                .collect(),
            ratios,
            ratio_spread,
            scaling_drift: drift,
            verdicts: Vec::new(),
        };
        out.verdicts.push(Verdict {
            item: "homogeneity".into(),
            pass: homogeneity <= 1e-6,
            detail: format!("max relative deviation from {scale}x: {homogeneity:.3e}"),
        });
        out
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|q| q.name == name).map(|q| q.value)
    }

    pub fn is_zero(&self) -> bool {
        self.quantities.iter().all(|q| q.value == 0.0)
    }

    pub fn within(&self, window: f64) -> bool {
        self.ratio_spread <= window
    }

    /// Adds the window and drift verdicts.
    pub fn judge(mut self, window: f64, drift_tol: f64) -> Self {
        self.verdicts.push(Verdict {
            item: "ratio_window".into(),
            pass: self.within(window),
            detail: format!("spread {:.4e} against window {window}", self.ratio_spread),
        });
        self.verdicts.push(Verdict {
            item: "scaling_drift".into(),
            pass: self.scaling_drift <= drift_tol,
            detail: format!("drift {:.3e} against {drift_tol:e}", self.scaling_drift),
        });
        self
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Shared inputs for the checks: the weight via the table, a lattice, the
/// averaging radius δ, the L^p quadrature grid and the sampling net for
/// suprema.
#[derive(Debug, Clone)]
pub struct CheckContext<'a> {
    pub t: &'a MomentTable,
    pub lat: &'a Lattice,
    pub delta: f64,
    pub grid: DiscGrid,
    pub net: Vec<Complex64>,
    /// Radius of the net; sampled suprema are compared on |z| <= reach.
    pub reach: f64,
    pub ratio_window: f64,
}

impl<'a> CheckContext<'a> {
    /// The net is resolved for kernels cut at `n_terms`.
    pub fn new(t: &'a MomentTable, lat: &'a Lattice, delta: f64, n_terms: usize, ratio_window: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= lat.params.alpha_cap) {
            return Err(Error::param("delta", delta, "0 < delta <= alpha_cap"));
        }
        if !(ratio_window >= 1.0) {
            return Err(Error::param("ratio_window", ratio_window, "ratio_window >= 1"));
        }
        Ok(Self {
            t,
            lat,
            delta,
            grid: field_grid(&t.weight),
            net: test_net(t, lat, n_terms),
            reach: net_reach(t, n_terms),
            ratio_window,
        })
    }

    pub fn weight(&self) -> &WeightModel {
        &self.t.weight
    }
}

fn net_reach(t: &MomentTable, n_terms: usize) -> f64 {
    t.resolved_radius(t.weight.r_max, n_terms) * t.weight.r_max
}

/// Lattice points inside the radius where kernels cut at `n_terms` are
/// resolved against any partner in the truncated disc, followed by 64
/// radial-angular samples of the same disc.
pub fn test_net(t: &MomentTable, lat: &Lattice, n_terms: usize) -> Vec<Complex64> {
    let reach = net_reach(t, n_terms);
    let mut net: Vec<Complex64> = lat.points.iter().copied().filter(|z| z.norm() <= reach).collect();
    net.extend(radial_angular_samples(8, 8, 0.0, reach));
    net
}

/// Transforms of one measure that the checks reuse.
#[derive(Debug, Clone)]
pub struct MeasureFields {
    pub berezin_grid: TransformField,
    pub avg_grid: TransformField,
    pub berezin_net: Vec<f64>,
    pub avg_net: Vec<f64>,
    /// μ̂_r(a_k) at the lattice scale r.
    pub lattice_avg: Vec<f64>,
}

impl MeasureFields {
    pub fn compute(mu: &Measure, ctx: &CheckContext<'_>) -> Result<Self> {
        let w = ctx.weight();
        Ok(Self {
            berezin_grid: berezin_measure(mu, ctx.t, &ctx.grid)?,
            avg_grid: avg_function(mu, w, ctx.delta, &ctx.grid)?,
            berezin_net: berezin_measure(mu, ctx.t, &ctx.net)?.values,
            avg_net: avg_function(mu, w, ctx.delta, &ctx.net)?.values,
            lattice_avg: lattice_terms(mu, w, ctx.lat, 0.0)?,
        })
    }
}

fn weighted_sup(values: &[f64], pts: &[Complex64], w: &WeightModel, e: f64) -> f64 {
    values
        .iter()
        .zip(pts)
        .map(|(v, z)| if *v == 0.0 { 0.0 } else { v * w.rho(*z).powf(e) })
        .fold(0.0, f64::max)
}

pub const AVERAGING_QUANTITIES: [&str; 3] = ["berezin_lp", "avg_lp", "lattice_lp"];

/// ‖μ̃‖_{L^p}, ‖μ̂_δ‖_{L^p} and the lattice l^p sum, against dA (lattice
/// weight ρ^{2/p}) or against dλ_ρ (no lattice weight).
pub fn averaging_equivalence(mu: &Measure, ctx: &CheckContext<'_>, p_list: &[f64], base: BaseMeasure) -> Result<Vec<EquivalenceReport>> {
    let f = MeasureFields::compute(mu, ctx)?;
    let f10 = MeasureFields::compute(&mu.scaled(10.0), ctx)?;
    let w = ctx.weight();
    let label = match base {
        BaseMeasure::Lebesgue => "averaging_dA",
        BaseMeasure::LambdaRho => "averaging_dlambda",
    };
    let eval = |f: &MeasureFields, p: f64| -> Result<Vec<f64>> {
        let t_exp = match base {
            BaseMeasure::Lebesgue => 2.0 / p,
            BaseMeasure::LambdaRho => 0.0,
        };
        let lattice: Vec<f64> = f
            .lattice_avg
            .iter()
            .zip(&ctx.lat.rhos)
            .map(|(v, r)| v * r.powf(t_exp))
            .collect();
        Ok(vec![
            lp_norm(&f.berezin_grid, p, base, &ctx.grid, w)?,
            lp_norm(&f.avg_grid, p, base, &ctx.grid, w)?,
            lp_of(&lattice, p),
        ])
    };
    p_list
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::param("p", p, "0 < p < inf"));
            }
            Ok(EquivalenceReport::new(label, p, None, &AVERAGING_QUANTITIES, eval(&f, p)?, eval(&f10, p)?, 10.0)
                .judge(ctx.ratio_window, 1e-6))
        })
        .collect()
}

/// ∫ |κ(v, z)|^q dμ(v), split into atoms, radial densities with q = 2
/// (closed form through the diagonal eigenvalues) and other densities
/// (ring-FFT quadrature).
struct KernelMass<'a> {
    t: &'a MomentTable,
    atoms: Vec<(Complex64, f64)>,
    radial_eigen: Vec<Vec<f64>>,
    /// (grid, density values) for densities handled by quadrature.
    quad: Vec<(DiscGrid, Vec<f64>)>,
}

impl<'a> KernelMass<'a> {
    fn new(mu: &Measure, t: &'a MomentTable, q: f64) -> Self {
        let mut radial_eigen = Vec::new();
        let mut quad = Vec::new();
        for part in mu.density_parts() {
            match part {
                Measure::Radial { profile, cutoff } if q == 2.0 => {
                    radial_eigen.push(radial_eigenvalues(profile, *cutoff, t, t.n_basis() + 1));
                }
                _ => {
                    let grid = DiscGrid::new(GridSpec {
                        upper: part.support_radius().min(t.weight.r_max),
                        levels: 8,
                        order: 16,
                        n_angles: 256,
                    });
                    let dens = grid.points().iter().map(|z| part.density(*z)).collect();
                    quad.push((grid, dens));
                }
            }
        }
        Self {
            t,
            atoms: mu.atom_list(),
            radial_eigen,
            quad,
        }
    }

    fn eval(&self, z: Complex64, q: f64) -> Result<f64> {
        let t = self.t;
        let mut total = 0.0;
        for &(a, m) in &self.atoms {
            let modulus = a.norm() * z.norm();
            let tail = t.tail_bound(modulus);
            if !(tail <= t.params.tail_tol) {
                return Err(Error::Truncation {
                    n_basis: t.n_basis(),
                    modulus,
                    tail,
                });
            }
            total += m * t.kappa(a, z).norm().powf(q);
        }
        if !self.radial_eigen.is_empty() {
            let kzz = t.kappa_diag(z);
            for lambda in &self.radial_eigen {
                total += kzz * diagonal_berezin(lambda, t, z);
            }
        }
        for (grid, dens) in &self.quad {
            let m = grid.n_angles();
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for ring in 0..grid.n_rings() {
                let d = &dens[ring * m..(ring + 1) * m];
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                t.ring_kappa(z, grid.ring_radius(ring), &mut buf);
                let s: f64 = buf.iter().zip(d).map(|(k, g)| g * k.norm().powf(q)).sum();
                total += grid.ring_weight(ring) * s;
            }
        }
        Ok(total)
    }
}

/// log ‖K_z‖_{A^p} - φ(z) as a function of |z|: exact for p = 2, otherwise
/// interpolated in |z|² from a table of quadrature values.
struct LogNormTable<'a> {
    t: &'a MomentTable,
    p: f64,
    reach: f64,
    values: Vec<f64>,
}

const NORM_TABLE_NODES: usize = 97;

impl<'a> LogNormTable<'a> {
    fn new(t: &'a MomentTable, p: f64, reach: f64) -> Result<Self> {
        let values = if p == 2.0 {
            Vec::new()
        } else {
            (0..NORM_TABLE_NODES)
                .into_par_iter()
                .map(|i| {
                    let s = reach * reach * i as f64 / (NORM_TABLE_NODES - 1) as f64;
                    let z = Complex64::new(s.sqrt(), 0.0);
                    let k = normalized_kernel(t, z, p)?;
                    Ok(k.log_norm - t.weight.phi(z))
                })
                .collect::<Result<_>>()?
        };
        Ok(Self { t, p, reach, values })
    }

    fn eval(&self, z: Complex64) -> f64 {
        if self.p == 2.0 {
            return 0.5 * (self.t.kappa_diag(z).ln() + 2.0 * self.t.weight.phi(z)) - self.t.weight.phi(z);
        }
        let x = (z.norm_sqr() / (self.reach * self.reach)).clamp(0.0, 1.0) * (NORM_TABLE_NODES - 1) as f64;
        let i = (x.floor() as usize).min(NORM_TABLE_NODES - 2);
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

/// sup over the net of ‖k_{p,z}‖^q_{L^q_μ}, a lower bound for the q-th power
/// of the embedding norm since each k_{p,z} has unit A^p norm.
pub fn embedding_lower_bound(mu: &Measure, t: &MomentTable, net: &[Complex64], p: f64, q: f64) -> Result<f64> {
    if mu.is_zero() || net.is_empty() {
        return Ok(0.0);
    }
    let reach = net.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let norms = LogNormTable::new(t, p, reach)?;
    let mass = KernelMass::new(mu, t, q);
    let vals: Vec<f64> = net
        .par_iter()
        .map(|&z| {
            // k_{p,z} e^{-φ} = κ(·, z) e^{φ(z) - log‖K_z‖}
            let scale = (-norms.eval(z)).exp();
            Ok(mass.eval(z, q)? * scale.powf(q))
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

pub const CARLESON_QUANTITIES: [&str; 4] = ["berezin_sup", "avg_sup", "lattice_sup", "embedding_lower_bound"];

fn check_pq(p: f64, q: f64, want_le: bool) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::param("p", p, "0 < p < inf"));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::param("q", q, "0 < q < inf"));
    }
    if want_le && p > q {
        return Err(Error::param("q", q, "q >= p"));
    }
    if !want_le && q >= p {
        return Err(Error::param("q", q, "q < p"));
    }
    Ok(())
}

fn carleson_values(mu: &Measure, f: &MeasureFields, ctx: &CheckContext<'_>, p: f64, q: f64) -> Result<Vec<f64>> {
    let w = ctx.weight();
    let e = 2.0 - 2.0 * q / p;
    Ok(vec![
        weighted_sup(&f.berezin_net, &ctx.net, w, e),
        weighted_sup(&f.avg_net, &ctx.net, w, e),
        ctx.lat
            .points
            .iter()
            .zip(&f.lattice_avg)
            .filter(|(z, _)| z.norm() <= ctx.reach)
            .map(|(z, v)| if *v == 0.0 { 0.0 } else { v * w.rho(*z).powf(e) })
            .fold(0.0, f64::max),
        embedding_lower_bound(mu, ctx.t, &ctx.net, p, q)?,
    ])
}

fn carleson_verdicts(mut rep: EquivalenceReport, window: f64) -> EquivalenceReport {
    let vals: Vec<f64> = rep.quantities.iter().map(|q| q.value).collect();
    let min_sup = vals[..3].iter().copied().fold(f64::INFINITY, f64::min);
    rep.verdicts.push(Verdict {
        item: "lower_bound_validity".into(),
        pass: vals[3] <= window * min_sup,
        detail: format!("embedding lower bound {:.4e} against {window} x {min_sup:.4e}", vals[3]),
    });
    let summary = if rep.is_zero() {
        "Carleson with norm 0".to_string()
    } else if rep.within(window) {
        "Carleson-consistent".to_string()
    } else {
        "inconsistent".to_string()
    };
    rep.verdicts.push(Verdict {
        item: "carleson".into(),
        pass: rep.is_zero() || rep.within(window),
        detail: summary,
    });
    rep
}

/// The four sampled quantities for a q-Carleson measure of A^p_φ, p <= q:
/// sup μ̃ρ^e, sup μ̂_δρ^e, sup_k μ̂_r(a_k)ρ(a_k)^e with e = 2 - 2q/p, and the
/// embedding lower bound.
pub fn carleson_check(mu: &Measure, ctx: &CheckContext<'_>, p: f64, q: f64) -> Result<EquivalenceReport> {
    Ok(carleson_checks(mu, ctx, &[(p, q)])?.remove(0))
}

/// carleson_check for several (p, q) pairs, sharing the transforms.
pub fn carleson_checks(mu: &Measure, ctx: &CheckContext<'_>, pairs: &[(f64, f64)]) -> Result<Vec<EquivalenceReport>> {
    for &(p, q) in pairs {
        check_pq(p, q, true)?;
    }
    let big = mu.scaled(10.0);
    let f = MeasureFields::compute(mu, ctx)?;
    let f10 = MeasureFields::compute(&big, ctx)?;
    pairs
        .iter()
        .map(|&(p, q)| {
            let rep = EquivalenceReport::new(
                "carleson",
                p,
                Some(q),
                &CARLESON_QUANTITIES,
                carleson_values(mu, &f, ctx, p, q)?,
                carleson_values(&big, &f10, ctx, p, q)?,
                10.0,
            );
            Ok(carleson_verdicts(rep.judge(ctx.ratio_window, 1e-6), ctx.ratio_window))
        })
        .collect()
}

pub const QLP_QUANTITIES: [&str; 3] = ["berezin_ls", "avg_ls", "lattice_ls"];

/// For q < p with s = p/(p-q): ‖μ̃‖_{L^s(dA)}, ‖μ̂_δ‖_{L^s(dA)} and the
/// lattice l^s sum with weight ρ^{2-2q/p}.
pub fn carleson_qlp_check(mu: &Measure, ctx: &CheckContext<'_>, p: f64, q: f64) -> Result<EquivalenceReport> {
    check_pq(p, q, false)?;
    let s = p / (p - q);
    let e = 2.0 - 2.0 * q / p;
    let w = ctx.weight();
    let eval = |f: &MeasureFields| -> Result<Vec<f64>> {
        let lattice: Vec<f64> = f.lattice_avg.iter().zip(&ctx.lat.rhos).map(|(v, r)| v * r.powf(e)).collect();
        Ok(vec![
            lp_norm(&f.berezin_grid, s, BaseMeasure::Lebesgue, &ctx.grid, w)?,
            lp_norm(&f.avg_grid, s, BaseMeasure::Lebesgue, &ctx.grid, w)?,
            lp_of(&lattice, s),
        ])
    };
    let f = MeasureFields::compute(mu, ctx)?;
    let f10 = MeasureFields::compute(&mu.scaled(10.0), ctx)?;
    Ok(EquivalenceReport::new("carleson_qlp", p, Some(q), &QLP_QUANTITIES, eval(&f)?, eval(&f10)?, 10.0)
        .judge(ctx.ratio_window, 1e-6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub item: String,
    pub peak: f64,
    /// (t, sup_{|z| > t} value).
    pub profile: Vec<(f64, f64)>,
}

impl DecayCurve {
    fn vanishes(&self, tol: f64) -> bool {
        self.profile.iter().any(|(_, v)| *v <= tol * self.peak)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingReport {
    pub p: f64,
    pub q: f64,
    pub vanish_tol: f64,
    pub curves: Vec<DecayCurve>,
    pub vanishing: bool,
    pub verdict: String,
}

impl VanishingReport {
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["item", "threshold", "sup"])?;
        for c in &self.curves {
            for (t, v) in &c.profile {
                wtr.write_record([c.item.clone(), format!("{t}"), format!("{v:.17e}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Decay profiles of μ̃ρ^e, μ̂_δρ^e (on the quadrature grid) and of the
/// lattice terms; vanishing-consistent when every profile drops to
/// vanish_tol times its peak before r_max.
pub fn vanishing_check(mu: &Measure, ctx: &CheckContext<'_>, p: f64, q: f64, thresholds: &[f64], vanish_tol: f64) -> Result<VanishingReport> {
    check_pq(p, q, true)?;
    if !(vanish_tol > 0.0) {
        return Err(Error::param("vanish_tol", vanish_tol, "vanish_tol > 0"));
    }
    let w = ctx.weight();
    let e = 2.0 - 2.0 * q / p;
    let f = MeasureFields::compute(mu, ctx)?;
    let weigh = |z: Complex64, v: f64| if v == 0.0 { 0.0 } else { v * w.rho(z).powf(e) };
    let lattice = TransformField {
        points: ctx.lat.points.clone(),
        values: f.lattice_avg.clone(),
        kind: crate::measures::FieldKind::Avg { r: ctx.lat.r() },
        grid: None,
    };
    let fields = [
        ("berezin", f.berezin_grid.map("berezin_weighted", weigh)),
        ("avg", f.avg_grid.map("avg_weighted", weigh)),
        ("lattice", lattice.map("lattice_weighted", weigh)),
    ];
    let curves = fields
        .iter()
        .map(|(name, field)| {
            Ok(DecayCurve {
                item: (*name).into(),
                peak: field.max(),
                profile: decay_profile(field, thresholds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vanishing = curves.iter().all(|c| c.vanishes(vanish_tol));
    Ok(VanishingReport {
        p,
        q,
        vanish_tol,
        curves,
        vanishing,
        verdict: if vanishing { "vanishing-consistent" } else { "not vanishing" }.into(),
    })
}

/// F = Σ_k c_k k_{p,w_k} stored by its monomial coefficients.
#[derive(Debug, Clone)]
pub struct AtomicFunction {
    pub p: f64,
    pub coefficients: Vec<Complex64>,
    /// ‖F‖_{A^p} by quadrature on the truncated disc.
    pub norm: f64,
    /// ‖c‖_{l^p}.
    pub coefficient_norm: f64,
    pub ratio: f64,
}

impl AtomicFunction {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        horner(&self.coefficients, z)
    }
}

pub const MAX_ATOMIC_TERMS: usize = 500;

/// (∫ |F e^{-φ}|^p dA)^{1/p} for a polynomial F, one inverse FFT per ring.
fn polynomial_lp_norm(t: &MomentTable, coeffs: &[Complex64], p: f64) -> f64 {
    let m = t.default_angles();
    let grid = t.disc_grid(m);
    let plan = fft_plan(m, true);
    let total: f64 = (0..grid.n_rings())
        .into_par_iter()
        .map(|ring| {
            let r = grid.ring_radius(ring);
            let lr = r.ln();
            let phi = t.weight.phi_radial(r);
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for (n, c) in coeffs.iter().enumerate() {
                if *c != Complex64::new(0.0, 0.0) {
                    let scale = if n == 0 { (-phi).exp() } else { (n as f64 * lr - phi).exp() };
                    buf[n % m] += c * scale;
                }
            }
            plan.process(&mut buf);
            grid.ring_weight(ring) * buf.iter().map(|v| v.norm().powf(p)).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total.powf(1.0 / p)
}

/// Builds F = Σ c_k k_{p,w_k} over lattice indices k and reports
/// ‖F‖_{A^p} / ‖c‖_{l^p}.
pub fn build_atomic_function(lat: &Lattice, c: &[(usize, f64)], p: f64, t: &MomentTable) -> Result<AtomicFunction> {
    if c.len() > MAX_ATOMIC_TERMS {
        return Err(Error::Contract(format!("{} coefficients exceed the limit of {MAX_ATOMIC_TERMS}", c.len())));
    }
    if let Some(&(k, _)) = c.iter().find(|(k, _)| *k >= lat.len()) {
        return Err(Error::Contract(format!("lattice index {k} out of range")));
    }
    let parts: Vec<Vec<Complex64>> = c
        .par_iter()
        .map(|&(k, ck)| {
            let kern = normalized_kernel(t, lat.points[k], p)?;
            Ok(kern.monomial_coefficients().into_iter().map(|v| v * ck).collect())
        })
        .collect::<Result<_>>()?;
    let mut coefficients = vec![Complex64::new(0.0, 0.0); t.n_basis() + 1];
    for part in &parts {
        coefficients.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    if coefficients.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Consistency("atomic function coefficients overflowed".into()));
    }
    let norm = polynomial_lp_norm(t, &coefficients, p);
    let coefficient_norm = lp_of(&c.iter().map(|(_, v)| v.abs()).collect::<Vec<_>>(), p);
    Ok(AtomicFunction {
        p,
        coefficients,
        norm,
        coefficient_norm,
        ratio: if coefficient_norm > 0.0 { norm / coefficient_norm } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhinchineReport {
    pub trials: usize,
    /// Mean over sign vectors of ‖Σ ε_k c_k k_{p,w_k}‖^q_{L^q_μ}.
    pub mc_mean: f64,
    /// Σ_k |c_k|^q ∫_{D^r(w_k)} |k_{p,w_k} e^{-φ}|^q dμ.
    pub rhs: f64,
    pub ratio: f64,
}

/// μ as weighted nodes: atoms, then densities on a polar grid.
fn discretize(mu: &Measure, w: &WeightModel) -> Vec<(Complex64, f64)> {
    let mut nodes = mu.atom_list();
    for part in mu.density_parts() {
        let grid = DiscGrid::new(GridSpec {
            upper: part.support_radius().min(w.r_max),
            levels: 8,
            order: 12,
            n_angles: 128,
        });
        for i in 0..grid.len() {
            let z = grid.point(i);
            let g = part.density(z);
            if g > 0.0 {
                nodes.push((z, g * grid.weight(i)));
            }
        }
    }
    nodes
}

/// Random-sign probe of the L^q_μ norm of atomic sums against the localized
/// sum of kernel masses; deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn khinchine_probe(mu: &Measure, t: &MomentTable, lat: &Lattice, c: &[(usize, f64)], p: f64, q: f64, trials: usize, seed: u64) -> Result<KhinchineReport> {
    if trials < 64 {
        return Err(Error::Contract(format!("{trials} trials; at least 64 are needed")));
    }
    check_pq(p, q.max(p), true)?;
    if let Some(&(k, _)) = c.iter().find(|(k, _)| *k >= lat.len()) {
        return Err(Error::Contract(format!("lattice index {k} out of range")));
    }
    let nodes = discretize(mu, &t.weight);
    // column k: k_{p,w_k} e^{-φ} at every node, times c_k
    let columns: Vec<Vec<Complex64>> = c
        .par_iter()
        .map(|&(k, ck)| {
            let kern = normalized_kernel(t, lat.points[k], p)?;
            Ok(nodes.iter().map(|(z, _)| kern.weighted(*z) * ck).collect())
        })
        .collect::<Result<_>>()?;
    let r = lat.r();
    let rhs: f64 = c
        .iter()
        .zip(&columns)
        .map(|(&(k, _), col)| {
            let (center, rho) = (lat.points[k], lat.rhos[k]);
            nodes
                .iter()
                .zip(col)
                .filter(|((z, _), _)| (z - center).norm() < r * rho)
                .map(|((_, m), v)| m * v.norm().powf(q))
                .sum::<f64>()
        })
        .sum();
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let signs: Vec<f64> = (0..columns.len()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            nodes
                .iter()
                .enumerate()
                .map(|(j, (_, m))| {
                    let g: Complex64 = columns.iter().zip(&signs).map(|(col, s)| col[j] * *s).sum();
                    m * g.norm().powf(q)
                })
                .sum()
        })
        .collect();
    let mc_mean = samples.iter().sum::<f64>() / trials as f64;
    Ok(KhinchineReport {
        trials,
        mc_mean,
        rhs,
        ratio: if rhs > 0.0 { mc_mean / rhs } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lattice, LatticeParams};
    use crate::kernel::{compute_moments, KernelParams};
    use crate::measures::RadialProfile;
    use crate::toeplitz::{spectrum, ToeplitzMatrix, DEFAULT_DIM};
    use std::sync::OnceLock;

    struct Setup {
        t: MomentTable,
        lat: Lattice,
    }

    fn setup() -> &'static Setup {
        static S: OnceLock<Setup> = OnceLock::new();
        S.get_or_init(|| {
            let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
            let t = compute_moments(&w, &KernelParams::default()).unwrap();
            let lat = build_lattice(&w, &LatticeParams::new(0.5, 0.9, 0.95), 1).unwrap();
            Setup { t, lat }
        })
    }

    fn ctx(s: &Setup) -> CheckContext<'_> {
        CheckContext::new(&s.t, &s.lat, 0.5, DEFAULT_DIM, 100.0).unwrap()
    }

    #[test]
    fn report_ratios_and_drift() {
        let r = EquivalenceReport::new("x", 1.0, None, &["a", "b"], vec![2.0, 4.0], vec![20.0, 40.0], 10.0);
        assert_eq!(r.ratios[0][1], 0.5);
        assert_eq!(r.ratio_spread, 2.0);
        assert_eq!(r.scaling_drift, 0.0);
        let z = EquivalenceReport::new("x", 1.0, None, &["a", "b"], vec![0.0, 0.0], vec![0.0, 0.0], 10.0);
        assert_eq!(z.ratio_spread, 1.0);
        assert!(z.is_zero());
        let bad = EquivalenceReport::new("x", 1.0, None, &["a", "b"], vec![1.0, 1.0], vec![10.0, 11.0], 10.0);
        assert!((bad.scaling_drift - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_measure_is_carleson_with_norm_zero() {
        let s = setup();
        let c = ctx(s);
        let r = carleson_check(&Measure::zero(), &c, 1.0, 2.0).unwrap();
        assert!(r.is_zero());
        assert!(r.verdicts.iter().any(|v| v.detail == "Carleson with norm 0"));
        let q = carleson_qlp_check(&Measure::zero(), &c, 2.0, 1.0).unwrap();
        assert!(q.is_zero());
    }

    #[test]
    fn single_atom_average_at_p_equal_q() {
        let s = setup();
        let c = ctx(s);
        let a = Complex64::new(0.3, 0.2);
        let mu = Measure::atom(a, 0.7);
        let reps = carleson_checks(&mu, &c, &[(1.0, 1.0), (2.0, 2.0)]).unwrap();
        // p-independent for p = q
        assert_eq!(reps[0].value("avg_sup"), reps[1].value("avg_sup"));
        let at_a = avg_function(&mu, &s.t.weight, 0.5, &vec![a]).unwrap().values[0];
        let rho = s.t.weight.rho(a);
        assert!((at_a - 0.7 / (rho * rho)).abs() < 1e-12 * at_a);
        assert!(reps[0].value("avg_sup").unwrap() >= at_a * (1.0 - 1e-12) || !c.net.contains(&a));
    }

    #[test]
    fn bridge_at_p_equal_q_two() {
        let s = setup();
        let c = ctx(s);
        let mu = Measure::Sum {
            parts: vec![
                Measure::atoms(vec![Complex64::new(0.2, 0.1), Complex64::new(-0.5, 0.3)], vec![0.3, 0.1]).unwrap(),
                Measure::radial(RadialProfile::Constant { level: 0.5 }, 0.7),
            ],
        };
        let r = carleson_check(&mu, &c, 2.0, 2.0).unwrap();
        let lower = r.value("embedding_lower_bound").unwrap();
        let sup = r.value("berezin_sup").unwrap();
        assert!((lower - sup).abs() <= 1e-9 * sup, "{lower} vs {sup}");
        let m = ToeplitzMatrix::assemble(&mu, &s.t, DEFAULT_DIM).unwrap();
        let lmax = spectrum(&m, &[]).unwrap().operator_norm;
        assert!(sup <= lmax + 1e-8);
        assert!(r.scaling_drift <= 1e-6);
    }

    #[test]
    fn embedding_bound_matches_norm_definition() {
        let s = setup();
        let t = &s.t;
        let a = Complex64::new(0.1, -0.4);
        let z = Complex64::new(0.35, 0.2);
        let mu = Measure::atom(a, 2.0);
        for p in [1.0, 2.0] {
            let got = embedding_lower_bound(&mu, t, &[z], p, 1.5).unwrap();
            let k = normalized_kernel(t, z, p).unwrap();
            let want = 2.0 * k.weighted(a).norm().powf(1.5);
            assert!((got - want).abs() < 1e-4 * want, "p = {p}: {got} vs {want}");
        }
        // radial density with q = 2 against direct quadrature
        let dens = Measure::radial(RadialProfile::Power { level: 1.0, power: 2.0 }, 0.8);
        let closed = KernelMass::new(&dens, t, 2.0).eval(z, 2.0).unwrap();
        let grid = DiscGrid::new(GridSpec { upper: 0.8, levels: 8, order: 16, n_angles: 512 });
        let direct: f64 = (0..grid.len())
            .map(|i| {
                let v = grid.point(i);
                grid.weight(i) * dens.density(v) * t.kappa(v, z).norm_sqr()
            })
            .sum();
        assert!((closed - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn vanishing_for_compact_support_only() {
        let s = setup();
        let c = ctx(s);
        let th = [0.6, 0.7, 0.8, 0.9, 0.94];
        let compact = Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.5);
        let v = vanishing_check(&compact, &c, 1.0, 1.0, &th, 1e-6).unwrap();
        assert!(v.vanishing, "{:?}", v.curves);
        let tripled = vanishing_check(&compact.scaled(3.0), &c, 1.0, 1.0, &th, 1e-6).unwrap();
        assert!(tripled.vanishing);
        for (a, b) in v.curves.iter().zip(&tripled.curves) {
            for ((_, x), (_, y)) in a.profile.iter().zip(&b.profile) {
                assert!((y - 3.0 * x).abs() <= 1e-12 * y.max(1e-300));
            }
        }
        let area = Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.95);
        let v = vanishing_check(&area, &c, 2.0, 2.0, &th, 1e-6).unwrap();
        assert!(!v.vanishing);
        let plateau = v.curves.iter().find(|c| c.item == "avg").unwrap();
        assert!(plateau.profile[1].1 > 0.1 * plateau.peak);
    }

    #[test]
    fn qlp_uniform_within_window() {
        let s = setup();
        let c = ctx(s);
        let area = Measure::radial(RadialProfile::Constant { level: 1.0 }, 0.95);
        let r = carleson_qlp_check(&area, &c, 2.0, 1.0).unwrap();
        assert!(r.within(100.0), "{:?}", r.quantities);
        assert!(r.scaling_drift <= 1e-6);
    }

    #[test]
    fn atomic_function_norms() {
        let s = setup();
        let t = &s.t;
        let idx = (0..s.lat.len()).min_by(|&a, &b| s.lat.points[a].norm().total_cmp(&s.lat.points[b].norm())).unwrap();
        for p in [1.0, 2.0] {
            let f = build_atomic_function(&s.lat, &[(idx, 1.0)], p, t).unwrap();
            assert!((f.norm - 1.0).abs() < 1e-6, "p = {p}: {}", f.norm);
            let g = build_atomic_function(&s.lat, &[(idx, 2.0)], p, t).unwrap();
            assert!((g.norm - 2.0 * f.norm).abs() < 1e-12);
        }
        let too_many: Vec<(usize, f64)> = (0..501).map(|k| (k % s.lat.len(), 1.0)).collect();
        assert!(build_atomic_function(&s.lat, &too_many, 1.0, t).is_err());
    }

    #[test]
    fn khinchine_probe_basics() {
        let s = setup();
        let t = &s.t;
        let idx = 0;
        let z = Khinchine::zero(s);
        assert_eq!(z.mc_mean, 0.0);
        let mu = Measure::atoms(vec![Complex64::new(0.2, 0.0), Complex64::new(-0.1, 0.3)], vec![1.0, 0.5]).unwrap();
        let single = khinchine_probe(&mu, t, &s.lat, &[(idx, 1.5)], 2.0, 2.0, 64, 9).unwrap();
        let k = normalized_kernel(t, s.lat.points[idx], 2.0).unwrap();
        let exact: f64 = mu.atom_list().iter().map(|(a, m)| m * (1.5 * k.weighted(*a).norm()).powi(2)).sum();
        assert!((single.mc_mean - exact).abs() < 1e-12 * exact);
        let again = khinchine_probe(&mu, t, &s.lat, &[(idx, 1.5)], 2.0, 2.0, 64, 9).unwrap();
        assert_eq!(single, again);
        assert!(khinchine_probe(&mu, t, &s.lat, &[(idx, 1.0)], 2.0, 2.0, 10, 9).is_err());
    }

    struct Khinchine;

    impl Khinchine {
        fn zero(s: &Setup) -> KhinchineReport {
            khinchine_probe(&Measure::zero(), &s.t, &s.lat, &[(0, 1.0), (1, -1.0)], 1.0, 2.0, 64, 3).unwrap()
        }
    }
}
