//! Moments h_n of e^{-2φ}, the reproducing kernel of A²_φ on the truncated
//! disc, normalized kernels, A^p kernel norms and decay diagnostics.
//!
//! Only κ(z, w) = K(z, w) e^{-φ(z) - φ(w)} is ever materialized; e^{φ}
//! itself overflows for exponential weights close to the boundary.
//!
//! Quadratures over the disc use the degree-`n_basis` kernel K_N together
//! with the radial rule the moments were computed with. K_N is the exact
//! reproducing kernel of the polynomials of degree <= n_basis in
//! L²(e^{-2φ} dA, |z| <= r_max), so the RKHS identities hold to round-off.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricGrid;
use crate::quadrature::{fft_plan, gauss_legendre, DiscGrid, RadialRule};
use crate::weights::{uniform_in_annulus, WeightModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub n_basis: usize,
    pub panel_levels: usize,
    pub panel_order: usize,
    /// Allowed kernel tail, relative to the largest term.
    pub tail_tol: f64,
    /// Allowed relative change of any moment under panel refinement.
    pub refine_tol: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            n_basis: 256,
            panel_levels: 12,
            panel_order: 32,
            tail_tol: 1e-10,
            refine_tol: 1e-12,
        }
    }
}

impl KernelParams {
    pub fn with_basis(n_basis: usize) -> Self {
        Self {
            n_basis,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentTable {
    pub weight: WeightModel,
    pub params: KernelParams,
    /// log h_n for n = 0..=n_basis.
    pub log_h: Vec<f64>,
    /// Radial rule the moments were integrated with.
    pub rule: RadialRule,
    /// Largest relative moment change under panel refinement.
    pub refinement_change: f64,
    inv_h: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub value: Complex64,
    pub z: Complex64,
    pub w: Complex64,
    /// Bound on the omitted tail, relative to the largest term.
    pub tail: f64,
}

fn moment_logs(w: &WeightModel, rule: &RadialRule, n_basis: usize) -> Vec<f64> {
    let log_r: Vec<f64> = rule.nodes.iter().map(|r| r.ln()).collect();
    let base: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&r, &wt)| wt.ln() - 2.0 * w.phi_radial(r))
        .collect();
    (0..=n_basis)
        .map(|n| {
            let k = (2 * n + 1) as f64;
            let m = base
                .iter()
                .zip(&log_r)
                .map(|(b, lr)| b + k * lr)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = base
                .iter()
                .zip(&log_r)
                .map(|(b, lr)| (b + k * lr - m).exp())
                .sum();
            std::f64::consts::LN_2 + m + s.ln()
        })
        .collect()
}

/// Moments h_n = 2∫_0^{r_max} r^{2n+1} e^{-2φ(r)} dr for n <= n_basis.
pub fn compute_moments(w: &WeightModel, params: &KernelParams) -> Result<MomentTable> {
    if !w.is_radial() {
        return Err(Error::NotRadial(w.name()));
    }
    if params.n_basis < 8 {
        return Err(Error::param("n_basis", params.n_basis as f64, "n_basis >= 8"));
    }
    if params.panel_order < 2 || params.panel_levels < 1 {
        return Err(Error::Contract("quadrature needs order >= 2 and levels >= 1".into()));
    }
    let rule = RadialRule::graded(w.r_max, params.panel_levels, params.panel_order);
    let log_h = moment_logs(w, &rule, params.n_basis);
    let fine = moment_logs(w, &rule.refined(), params.n_basis);
    let change = log_h
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).exp_m1().abs())
        .fold(0.0, f64::max);
    if !(change <= params.refine_tol) {
        return Err(Error::Precision {
            what: format!("moments of {}", w.name()),
            change,
        });
    }
    if log_h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Consistency("non-finite moment".into()));
    }
    for n in 0..params.n_basis {
        if log_h[n + 1] >= log_h[n] {
            return Err(Error::Consistency(format!("h_{} >= h_{}", n + 1, n)));
        }
    }
    let inv_h = if log_h.iter().all(|v| v.abs() < 600.0) {
        Some(log_h.iter().map(|v| (-v).exp()).collect())
    } else {
        None
    };
    Ok(MomentTable {
        weight: *w,
        params: *params,
        log_h,
        rule,
        refinement_change: change,
        inv_h,
    })
}

impl MomentTable {
    pub fn n_basis(&self) -> usize {
        self.params.n_basis
    }

    pub fn h(&self, n: usize) -> f64 {
        self.log_h[n].exp()
    }

    /// Largest n with log_h[n] + log_h[n+2] < 2 log_h[n+1], if any.
    pub fn log_convexity_violation(&self) -> Option<usize> {
        self.log_h
            .windows(3)
            .position(|v| v[0] + v[2] < 2.0 * v[1] - 1e-13 * v[1].abs().max(1.0))
    }

    /// Angular resolution for disc quadratures: comfortably above n_basis so
    /// that monomials up to the basis degree stay orthogonal on the grid.
    pub fn default_angles(&self) -> usize {
        2 * (self.n_basis() + 1).next_power_of_two()
    }

    /// Product grid built on the moment rule.
    pub fn disc_grid(&self, n_angles: usize) -> DiscGrid {
        DiscGrid::from_rule(self.rule.clone(), n_angles)
    }

    fn log_term(&self, n: usize, log_mod: f64) -> f64 {
        if n == 0 {
            -self.log_h[0]
        } else {
            n as f64 * log_mod - self.log_h[n]
        }
    }

    /// Bound on Σ_{n > N} |x|^n / h_n relative to the largest retained term,
    /// from log-convexity of the moments. Infinite if the series has not
    /// started to converge by n = N.
    pub fn tail_bound(&self, modulus: f64) -> f64 {
        self.tail_bound_at(modulus, self.n_basis())
    }

    pub fn tail_bound_at(&self, modulus: f64, n_terms: usize) -> f64 {
        if modulus == 0.0 {
            return 0.0;
        }
        let n = n_terms.min(self.n_basis()).max(1);
        let lm = modulus.ln();
        let q = (lm + self.log_h[n - 1] - self.log_h[n]).exp();
        if q >= 1.0 {
            return f64::INFINITY;
        }
        let max = (0..=n).map(|k| self.log_term(k, lm)).fold(f64::NEG_INFINITY, f64::max);
        (self.log_term(n, lm) - max).exp() * q / (1.0 - q)
    }

    /// Largest t such that the kernel series at |z w̄| = t·partner, cut at
    /// `n_terms`, has tail below the table's tolerance.
    pub fn resolved_radius(&self, partner: f64, n_terms: usize) -> f64 {
        let tol = self.params.tail_tol;
        let (mut lo, mut hi) = (0.0, 1.0);
        if self.tail_bound_at(partner, n_terms) <= tol {
            return 1.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.tail_bound_at(mid * partner, n_terms) <= tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Σ_{n<=N} x^n / h_n without prefactor, as (log scale, unit sum) with
    /// value = exp(scale)·sum.
    fn series(&self, x: Complex64, n_terms: usize) -> (f64, Complex64) {
        let n_max = n_terms.min(self.n_basis());
        let modulus = x.norm();
        if modulus == 0.0 {
            return (-self.log_h[0], Complex64::new(1.0, 0.0));
        }
        if let Some(inv) = &self.inv_h {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in (0..=n_max).rev() {
                acc = acc * x + inv[n];
            }
            return (0.0, acc);
        }
        let lm = modulus.ln();
        let unit = x / modulus;
        let max = (0..=n_max).map(|n| self.log_term(n, lm)).fold(f64::NEG_INFINITY, f64::max);
        let mut phase = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..=n_max {
            acc += phase * (self.log_term(n, lm) - max).exp();
            phase *= unit;
        }
        (max, acc)
    }

    /// κ_N(z, w), the degree-n_basis kernel, with no truncation check.
    pub fn kappa(&self, z: Complex64, w: Complex64) -> Complex64 {
        self.kappa_terms(z, w, self.n_basis())
    }

    /// κ cut after `n_terms` (the kernel of polynomials of that degree).
    pub fn kappa_terms(&self, z: Complex64, w: Complex64, n_terms: usize) -> Complex64 {
        let (scale, sum) = self.series(z * w.conj(), n_terms);
        let phi = self.weight.phi(z) + self.weight.phi(w);
        sum * (scale - phi).exp()
    }

    /// κ_N(z, z) > 0.
    pub fn kappa_diag(&self, z: Complex64) -> f64 {
        self.kappa_diag_terms(z, self.n_basis())
    }

    pub fn kappa_diag_terms(&self, z: Complex64, n_terms: usize) -> f64 {
        let (scale, sum) = self.series(Complex64::new(z.norm_sqr(), 0.0), n_terms);
        sum.re * (scale - 2.0 * self.weight.phi(z)).exp()
    }

    /// κ(r e^{iθ_k}, z) for θ_k = 2πk/M, M = out.len(), via one inverse FFT
    /// (coefficients above M are folded, which is exact on the nodes).
    pub fn ring_kappa(&self, z: Complex64, radius: f64, out: &mut [Complex64]) {
        let m = out.len();
        let modulus = radius * z.norm();
        let pre = -self.weight.phi_radial(radius) - self.weight.phi(z);
        if modulus == 0.0 {
            let v = (pre - self.log_h[0]).exp();
            out.iter_mut().for_each(|o| *o = Complex64::new(v, 0.0));
            return;
        }
        let lm = modulus.ln();
        let n_max = self.n_basis();
        let max = (0..=n_max).map(|n| self.log_term(n, lm)).fold(f64::NEG_INFINITY, f64::max);
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        let rot = Complex64::from_polar(1.0, -z.arg());
        let mut phase = Complex64::new(1.0, 0.0);
        for n in 0..=n_max {
            out[n % m] += phase * (self.log_term(n, lm) - max).exp();
            phase *= rot;
        }
        fft_plan(m, true).process(out);
        let s = (max + pre).exp();
        out.iter_mut().for_each(|o| *o *= s);
    }

    /// ∫ |κ(w, z)|^p dA(w) over the truncated disc.
    pub fn kappa_power_integral(&self, z: Complex64, p: f64, n_angles: usize) -> f64 {
        let grid = self.disc_grid(n_angles);
        let zr = Complex64::new(z.norm(), 0.0);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_angles];
        let mut total = 0.0;
        for ring in 0..grid.n_rings() {
            self.ring_kappa(zr, grid.ring_radius(ring), &mut buf);
            let s: f64 = if p == 2.0 {
                buf.iter().map(|v| v.norm_sqr()).sum()
            } else {
                buf.iter().map(|v| v.norm().powf(p)).sum()
            };
            total += grid.ring_weight(ring) * s;
        }
        total
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["n", "log_h"])?;
        for (n, v) in self.log_h.iter().enumerate() {
            wtr.write_record([n.to_string(), format!("{v:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Checked kernel evaluation: errors when the series tail at |z w̄| exceeds
/// the tolerance relative to the largest term.
pub fn kernel_eval(t: &MomentTable, z: Complex64, w_pt: Complex64) -> Result<KernelValue> {
    t.weight.check_point(z)?;
    t.weight.check_point(w_pt)?;
    let modulus = (z * w_pt.conj()).norm();
    let tail = t.tail_bound(modulus);
    if !(tail <= t.params.tail_tol) {
        return Err(Error::Truncation {
            n_basis: t.n_basis(),
            modulus,
            tail,
        });
    }
    Ok(KernelValue {
        value: t.kappa(z, w_pt),
        z,
        w: w_pt,
        tail,
    })
}

/// Log of ‖K_z‖ in A^p_φ on the truncated disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelNorm {
    pub z: Complex64,
    pub p: f64,
    pub log_norm: f64,
}

impl KernelNorm {
    pub fn value(&self) -> f64 {
        self.log_norm.exp()
    }
}

pub fn norm_kz(t: &MomentTable, z: Complex64, p: f64) -> Result<KernelNorm> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::param("p", p, "0 < p < inf"));
    }
    t.weight.check_point(z)?;
    let integral = t.kappa_power_integral(z, p, t.default_angles());
    if !(integral > 0.0 && integral.is_finite()) {
        return Err(Error::Consistency(format!("kernel p-integral {integral} at {z}")));
    }
    Ok(KernelNorm {
        z,
        p,
        log_norm: t.weight.phi(z) + integral.ln() / p,
    })
}

/// k_{p,z} = K_z / ‖K_z‖_{A^p}.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedKernel<'a> {
    pub table: &'a MomentTable,
    pub z: Complex64,
    pub p: f64,
    pub log_norm: f64,
}

pub fn normalized_kernel(t: &MomentTable, z: Complex64, p: f64) -> Result<NormalizedKernel<'_>> {
    let norm = norm_kz(t, z, p)?;
    Ok(NormalizedKernel {
        table: t,
        z,
        p,
        log_norm: norm.log_norm,
    })
}

impl NormalizedKernel<'_> {
    /// k_{p,z}(w) e^{-φ(w)}.
    pub fn weighted(&self, w: Complex64) -> Complex64 {
        self.table.kappa(w, self.z) * (self.table.weight.phi(self.z) - self.log_norm).exp()
    }

    /// Factor turning κ(·, z) into k_{p,z} e^{-φ}.
    pub fn kappa_scale(&self) -> f64 {
        (self.table.weight.phi(self.z) - self.log_norm).exp()
    }

    /// Coefficients of k_{p,z} in the monomial basis w^n.
    pub fn monomial_coefficients(&self) -> Vec<Complex64> {
        let zc = self.z.conj();
        let mut out = Vec::with_capacity(self.table.n_basis() + 1);
        let lm = zc.norm().ln();
        let unit = if zc.norm() > 0.0 { zc / zc.norm() } else { Complex64::new(1.0, 0.0) };
        let mut phase = Complex64::new(1.0, 0.0);
        for n in 0..=self.table.n_basis() {
            let mag = if n == 0 {
                (-self.table.log_h[0] - self.log_norm).exp()
            } else {
                (n as f64 * lm - self.table.log_h[n] - self.log_norm).exp()
            };
            out.push(phase * mag);
            phase *= unit;
        }
        out
    }

    /// ‖k_{p,z}‖_{A^p} by quadrature (should be 1).
    pub fn norm_check(&self) -> f64 {
        let integral = self.table.kappa_power_integral(self.z, self.p, self.table.default_angles());
        integral.powf(1.0 / self.p) * self.kappa_scale()
    }
}

/// |∫ f(w) K(z, w) e^{-2φ(w)} dA(w) - f(z)| for a polynomial f (ascending
/// coefficients), by quadrature on the moment grid.
pub fn reproducing_residual(t: &MomentTable, f: &[Complex64], z: Complex64) -> Result<f64> {
    let deg = f.len().saturating_sub(1);
    if deg + 2 > t.n_basis() {
        return Err(Error::Contract(format!(
            "polynomial degree {deg} exceeds n_basis - 2 = {}",
            t.n_basis() as i64 - 2
        )));
    }
    t.weight.check_point(z)?;
    let m = t.default_angles();
    let grid = t.disc_grid(m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut acc = Complex64::new(0.0, 0.0);
    for ring in 0..grid.n_rings() {
        let r = grid.ring_radius(ring);
        t.ring_kappa(z, r, &mut buf);
        let damp = (-t.weight.phi_radial(r)).exp();
        let mut s = Complex64::new(0.0, 0.0);
        for (k, kv) in buf.iter().enumerate() {
            let w = Complex64::from_polar(r, grid.angle(k));
            s += horner(f, w) * kv.conj();
        }
        acc += s * damp * grid.ring_weight(ring);
    }
    let value = acc * t.weight.phi(z).exp();
    Ok((value - horner(f, z)).norm())
}

pub(crate) fn horner(c: &[Complex64], x: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * x + a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub sigma: f64,
    pub c_tilde: f64,
    /// RMS residual of the least-squares line.
    pub residual: f64,
    pub n_pairs: usize,
    /// Largest sampled log(κ(z,z) ρ(z)²), the envelope's value at d_ρ = 0.
    pub diagonal_max: f64,
    /// Set for oracle weights outside W₀ (the fit is then not meaningful).
    pub oracle: bool,
}

/// Fits log(|κ(z,w)| ρ(z) ρ(w)) ≈ C - σ d_ρ(z,w) over random pairs, then
/// lifts C so the line is an upper envelope of all samples and of the
/// diagonal values.
pub fn fit_decay_sigma(t: &MomentTable, grid: &MetricGrid, n_pairs: usize, seed: u64) -> Result<DecayFit> {
    if n_pairs < 100 {
        return Err(Error::param("n_pairs", n_pairs as f64, "n_pairs >= 100"));
    }
    let w = &t.weight;
    let radius = 0.9 * t.resolved_radius(t.weight.r_max, t.n_basis()).min(w.r_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_source = 10;
    let n_sources = n_pairs.div_ceil(per_source);
    let mut xs = Vec::with_capacity(n_pairs);
    let mut ys = Vec::with_capacity(n_pairs);
    let mut diag_max = f64::NEG_INFINITY;
    for _ in 0..n_sources {
        let z = uniform_in_annulus(&mut rng, 0.0, radius);
        let dist = grid.distances_from(z);
        let kzz = t.kappa_diag(z);
        diag_max = diag_max.max(kzz.ln() + 2.0 * w.rho(z).ln());
        for _ in 0..per_source {
            if xs.len() == n_pairs {
                break;
            }
            let v = uniform_in_annulus(&mut rng, 0.0, radius);
            let d = grid.distance_at(&dist, v);
            let k = t.kappa(z, v).norm();
            // values at the level of cancellation noise carry no information
            if d <= 0.0 || k < 1e-9 * (kzz * t.kappa_diag(v)).sqrt() {
                continue;
            }
            xs.push(d);
            ys.push(k.ln() + w.rho(z).ln() + w.rho(v).ln());
        }
    }
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::Consistency("too few usable pairs for decay fit".into()));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let rms = (resid.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let lift = resid.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    Ok(DecayFit {
        sigma: -slope,
        c_tilde: (intercept + lift).max(diag_max),
        residual: rms,
        n_pairs: xs.len(),
        diagonal_max: diag_max,
        oracle: w.is_oracle(),
    })
}

/// R_p(z) = ‖K_z‖_{A^p} / (e^{φ(z)} ρ(z)^{2/p - 2}) over a radial sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRatio {
    pub p: f64,
    pub radii: Vec<f64>,
    pub log_ratio: Vec<f64>,
    /// max R_p / min R_p.
    pub spread: f64,
    /// Least-squares slope of log R_p against log(1 - |z|).
    pub slope: f64,
}

pub fn norm_ratio_statistic(t: &MomentTable, p: f64, radii: &[f64]) -> Result<NormRatio> {
    let w = &t.weight;
    let mut log_ratio = Vec::with_capacity(radii.len());
    for &r in radii {
        let z = Complex64::new(r, 0.0);
        let n = norm_kz(t, z, p)?;
        log_ratio.push(n.log_norm - w.phi(z) - (2.0 / p - 2.0) * w.rho(z).ln());
    }
    let hi = log_ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = log_ratio.iter().copied().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = radii.iter().map(|r| (1.0 - r).ln()).collect();
    Ok(NormRatio {
        p,
        radii: radii.to_vec(),
        spread: (hi - lo).exp(),
        slope: least_squares_slope(&xs, &log_ratio),
        log_ratio,
    })
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// ∫_{D(c, R)} f dA by a polar Gauss rule centred at c.
pub fn disc_integral(c: Complex64, radius: f64, order: usize, n_angles: usize, f: impl Fn(Complex64) -> f64) -> f64 {
    let (x, wx) = gauss_legendre(order);
    let mut total = 0.0;
    for (xi, wi) in x.iter().zip(&wx) {
        let s = 0.5 * radius * (xi + 1.0);
        let ring: f64 = (0..n_angles)
            .map(|k| f(c + Complex64::from_polar(s, TAU * k as f64 / n_angles as f64)))
            .sum();
        total += 0.5 * radius * wi * s * ring * 2.0 / n_angles as f64;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMeanReport {
    pub r: f64,
    /// Per-sample constant: max over test points near a of the sub-mean quotient.
    pub constants: Vec<f64>,
    pub c_meas: f64,
    /// max / min of the per-sample constants.
    pub stability: f64,
}

/// Sub-mean quotients |f(z)e^{-φ(z)}|² ρ(z)² / ∫_{D^r(z)} |f e^{-φ}|² dA for
/// f = k_{2,a} at random a, probing z at and around a.
pub fn sub_mean_check(t: &MomentTable, r: f64, n_samples: usize, seed: u64) -> Result<SubMeanReport> {
    let w = &t.weight;
    let radius = 0.8 * t.resolved_radius(w.r_max, t.n_basis()).min(w.r_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut constants = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let a = uniform_in_annulus(&mut rng, 0.0, radius);
        let mut best = 0.0f64;
        for step in [0.0, 0.5, 1.0] {
            let th = rng.gen::<f64>() * TAU;
            let z = a + Complex64::from_polar(step * w.rho(a), th);
            if z.norm() > radius {
                continue;
            }
            let rz = w.rho(z);
            let num = t.kappa(z, a).norm_sqr() * rz * rz;
            let den = disc_integral(z, r * rz, 24, 48, |v| t.kappa(v, a).norm_sqr());
            best = best.max(num / den);
        }
        constants.push(best);
    }
    let c_meas = constants.iter().copied().fold(0.0, f64::max);
    let lo = constants.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SubMeanReport {
        r,
        constants,
        c_meas,
        stability: c_meas / lo,
    })
}

/// |κ(z,w)| on a polar grid around a fixed source, for plotting.
pub fn export_kernel_heatmap(t: &MomentTable, source: Complex64, n_r: usize, n_theta: usize, path: &Path) -> Result<()> {
    t.weight.check_point(source)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "re,im,abs_kappa,arg_kappa")?;
    for i in 0..=n_r {
        let r = t.weight.r_max * i as f64 / n_r as f64;
        for j in 0..n_theta {
            let w = Complex64::from_polar(r, TAU * j as f64 / n_theta as f64);
            let k = t.kappa(w, source);
            writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e}", w.re, w.im, k.norm(), k.arg())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_table(n: usize) -> MomentTable {
        let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
        compute_moments(&w, &KernelParams::with_basis(n)).unwrap()
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn flat_moments_are_reciprocals() {
        let w = WeightModel::flat(1.0).unwrap();
        let t = compute_moments(&w, &KernelParams::default()).unwrap();
        for n in 0..=256 {
            let h = t.h(n);
            assert!((h * (n + 1) as f64 - 1.0).abs() < 1e-12, "n={n} h={h}");
        }
    }

    #[test]
    fn exp_h0_matches_adaptive_simpson() {
        let t = exp_table(16);
        let f = |r: f64| 2.0 * r * (-2.0 / (1.0 - r * r)).exp();
        let oracle = simpson(&f, 0.0, 0.95, 1e-16);
        assert!((t.h(0) / oracle - 1.0).abs() < 1e-10, "{} vs {oracle}", t.h(0));
    }

    #[test]
    fn moments_are_log_convex_and_decreasing() {
        let t = exp_table(256);
        assert!(t.log_convexity_violation().is_none());
        assert!(t.h(0) * t.h(2) >= t.h(1) * t.h(1));
        assert!(t.log_h.windows(2).all(|v| v[1] < v[0]));
    }

    #[test]
    fn bad_inputs() {
        let w = WeightModel::exp(1.0, 1.0, 0.95).unwrap();
        assert!(compute_moments(&w, &KernelParams::with_basis(4)).is_err());
        let t = exp_table(32);
        assert!(matches!(kernel_eval(&t, Complex64::new(0.97, 0.0), Complex64::new(0.0, 0.0)), Err(Error::Domain { .. })));
        assert!(matches!(
            kernel_eval(&t, Complex64::new(0.94, 0.0), Complex64::new(0.94, 0.0)),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn flat_kernel_closed_form() {
        let w = WeightModel::flat(1.0).unwrap();
        let t = compute_moments(&w, &KernelParams::with_basis(512)).unwrap();
        let k = kernel_eval(&t, Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)).unwrap();
        assert!((k.value.re - 1.0 / 0.5625).abs() < 1e-10);
    }

    #[test]
    fn kernel_at_origin_is_a_single_term() {
        let t = exp_table(64);
        let z = Complex64::new(0.3, -0.4);
        let k = kernel_eval(&t, z, Complex64::new(0.0, 0.0)).unwrap();
        let expected = (-t.weight.phi(z) - 1.0 - t.log_h[0]).exp();
        assert!((k.value.re - expected).abs() < 1e-14 * expected);
        assert!(k.value.im.abs() < 1e-14 * expected);
    }

    #[test]
    fn diagonal_positive_and_cauchy_schwarz() {
        let t = exp_table(256);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z = uniform_in_annulus(&mut rng, 0.0, 0.8);
            let v = uniform_in_annulus(&mut rng, 0.0, 0.8);
            let kzz = kernel_eval(&t, z, z).unwrap().value;
            assert!(kzz.re > 0.0 && kzz.im.abs() <= 1e-14 * kzz.re);
            let kzv = kernel_eval(&t, z, v).unwrap().value.norm();
            assert!(kzv <= (kzz.re * t.kappa_diag(v)).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ring_fft_matches_direct_sum() {
        let t = exp_table(64);
        let z = Complex64::new(0.2, 0.5);
        let mut buf = vec![Complex64::new(0.0, 0.0); 32];
        t.ring_kappa(z, 0.7, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            let w = Complex64::from_polar(0.7, TAU * k as f64 / 32.0);
            let direct = t.kappa(w, z);
            assert!((v - direct).norm() < 1e-12 * direct.norm().max(1e-3), "k={k}");
        }
    }

    #[test]
    fn rkhs_identity_and_flat_norms() {
        let t = exp_table(256);
        for r in [0.0, 0.3, 0.6] {
            let z = Complex64::from_polar(r, 1.0);
            let n = norm_kz(&t, z, 2.0).unwrap();
            let lhs = 2.0 * n.log_norm;
            let rhs = t.kappa_diag(z).ln() + 2.0 * t.weight.phi(z);
            assert!((lhs - rhs).abs() < 1e-8);
        }
        let flat = compute_moments(&WeightModel::flat(1.0).unwrap(), &KernelParams::with_basis(64)).unwrap();
        for p in [0.5, 1.0, 3.0] {
            let n = norm_kz(&flat, Complex64::new(0.0, 0.0), p).unwrap();
            assert!(n.log_norm.abs() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn normalized_kernels_have_unit_norm() {
        let t = exp_table(256);
        for p in [1.0, 2.0, 4.0] {
            let k = normalized_kernel(&t, Complex64::new(0.1, 0.4), p).unwrap();
            assert!((k.norm_check() - 1.0).abs() < 1e-8);
        }
        let k = normalized_kernel(&t, Complex64::new(0.3, 0.2), 2.0).unwrap();
        let c = k.monomial_coefficients();
        let w = Complex64::new(-0.4, 0.1);
        let direct = k.weighted(w) * t.weight.phi(w).exp();
        assert!((horner(&c, w) - direct).norm() < 1e-10 * direct.norm());
    }

    #[test]
    fn p1_norm_matches_monte_carlo() {
        let t = exp_table(256);
        let z = Complex64::new(0.3, 0.0);
        let integral = t.kappa_power_integral(z, 1.0, t.default_angles());
        // plain series evaluation, independent of the ring FFT
        let inv: Vec<f64> = t.log_h.iter().map(|v| (-v).exp()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000_000usize;
        let r_max = t.weight.r_max;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let w = Complex64::from_polar(r_max * rng.gen::<f64>().sqrt(), TAU * rng.gen::<f64>());
            let x = w * z.conj();
            let mut acc = Complex64::new(0.0, 0.0);
            for c in inv.iter().rev() {
                acc = acc * x + c;
            }
            let v = acc.norm() * (-t.weight.phi(w) - t.weight.phi(z)).exp() * r_max * r_max;
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - integral).abs() < 3.0 * se, "mc {mean} ± {se}, quad {integral}");
    }

    #[test]
    fn reproducing_property() {
        let t = exp_table(256);
        let one = vec![Complex64::new(1.0, 0.0)];
        let cube = vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        for z in [Complex64::new(0.0, 0.0), Complex64::new(0.4, 0.0), Complex64::new(-0.3, 0.6)] {
            assert!(reproducing_residual(&t, &one, z).unwrap() < 1e-8);
            assert!(reproducing_residual(&t, &cube, z).unwrap() < 1e-8);
        }
        let long = vec![Complex64::new(1.0, 0.0); 256];
        assert!(matches!(reproducing_residual(&t, &long, Complex64::new(0.1, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn diagonal_window_and_localisation() {
        let t = exp_table(256);
        let w = t.weight;
        let vals: Vec<f64> = [0.0, 0.3, 0.6]
            .iter()
            .map(|&r| {
                let z = Complex64::new(r, 0.0);
                t.kappa_diag(z).sqrt() * w.rho(z)
            })
            .collect();
        let spread = vals.iter().copied().fold(0.0, f64::max) / vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < 10.0, "{vals:?}");
        // sup over |w| <= 0.5 of |k_z(w)| e^{-φ(w)} falls as z moves out
        let sup = |zr: f64| {
            let z = Complex64::new(zr, 0.0);
            let nz = t.kappa_diag(z).sqrt();
            (0..=50)
                .flat_map(|i| (0..64).map(move |j| Complex64::from_polar(0.5 * i as f64 / 50.0, TAU * j as f64 / 64.0)))
                .map(|v| t.kappa(v, z).norm() / nz)
                .fold(0.0, f64::max)
        };
        let s: Vec<f64> = [0.5, 0.7, 0.9].iter().map(|f| sup(f * 0.95)).collect();
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
    }

    #[test]
    fn decay_fit() {
        let t = exp_table(256);
        let grid = MetricGrid::new(&t.weight, 64, 128, 3).unwrap();
        let fit = fit_decay_sigma(&t, &grid, 200, 1).unwrap();
        assert!(fit.sigma > 0.0, "{fit:?}");
        assert!(!fit.oracle);
        assert!(fit.c_tilde >= fit.diagonal_max);

        let flat = WeightModel::flat(0.95).unwrap();
        let ft = compute_moments(&flat, &KernelParams::with_basis(256)).unwrap();
        let fgrid = MetricGrid::new(&flat, 64, 128, 3).unwrap();
        let ffit = fit_decay_sigma(&ft, &fgrid, 200, 1).unwrap();
        assert!(ffit.oracle);
    }

    #[test]
    fn sub_mean_constant_is_stable() {
        let t = exp_table(256);
        let rep = sub_mean_check(&t, 0.25, 20, 5).unwrap();
        assert!(rep.c_meas.is_finite() && rep.c_meas > 1.0);
        let median = {
            let mut c = rep.constants.clone();
            c.sort_by(f64::total_cmp);
            c[c.len() / 2]
        };
        for c in &rep.constants {
            assert!((c / median - 1.0).abs() <= 0.5, "{:?}", rep.constants);
        }
    }
}
