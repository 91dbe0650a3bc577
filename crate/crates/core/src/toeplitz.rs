//! Toeplitz operators T_μ compressed to the orthonormal monomials
//! e_n(w) = w^n / √h_n, n < N_T: assembly, action, Berezin symbol, spectra
//! and Schatten norms.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleson::EquivalenceReport;
use crate::error::{Error, Result};
use crate::geometry::Lattice;
use crate::kernel::MomentTable;
use crate::measures::{avg_function, radial_eigenvalues, lattice_terms, lp_norm, lp_of, BaseMeasure, FieldKind, Measure, TransformField};
use crate::quadrature::{fft_plan, DiscGrid};
use crate::weights::WeightModel;

pub const DEFAULT_DIM: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzMatrix {
    pub dim: usize,
    /// entries[(m, n)] = ∫ e_n conj(e_m) e^{-2φ} dμ.
    pub entries: DMatrix<Complex64>,
}

/// log |e_n(w)| e^{-φ(w)} = n log|w| - φ(w) - log h_n / 2.
fn log_basis(t: &MomentTable, log_mod: f64, phi: f64, n: usize) -> f64 {
    if n == 0 {
        -phi - 0.5 * t.log_h[0]
    } else {
        n as f64 * log_mod - phi - 0.5 * t.log_h[n]
    }
}

impl ToeplitzMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: DMatrix::zeros(dim, dim),
        }
    }

    /// Exact sums over atoms; radial densities through their diagonal; other
    /// densities on the moment-rule polar grid, one FFT per ring.
    pub fn assemble(mu: &Measure, t: &MomentTable, dim: usize) -> Result<Self> {
        if dim == 0 || dim > t.n_basis() + 1 {
            return Err(Error::Contract(format!(
                "toeplitz dimension {dim} must lie in 1..={}",
                t.n_basis() + 1
            )));
        }
        mu.validate(&t.weight)?;
        let mut out = Self::zeros(dim);
        for (a, mass) in mu.atom_list() {
            let tail = t.tail_bound_at(a.norm_sqr(), dim - 1);
            if !(tail <= t.params.tail_tol) {
                return Err(Error::Truncation {
                    n_basis: dim - 1,
                    modulus: a.norm_sqr(),
                    tail,
                });
            }
            out.add_atom(t, a, mass);
        }
        for part in mu.density_parts() {
            out.add_density(t, part);
        }
        Ok(out)
    }

    fn add_atom(&mut self, t: &MomentTable, a: Complex64, mass: f64) {
        let phi = t.weight.phi(a);
        let lm = a.norm().ln();
        let unit = if a.norm() > 0.0 { a / a.norm() } else { Complex64::new(1.0, 0.0) };
        let mut v = Vec::with_capacity(self.dim);
        let mut phase = Complex64::new(1.0, 0.0);
        for n in 0..self.dim {
            let mag = if a.norm() == 0.0 && n > 0 { 0.0 } else { log_basis(t, lm, phi, n).exp() };
            v.push(phase * mag);
            phase *= unit;
        }
        for n in 0..self.dim {
            for m in 0..=n {
                let e = v[n] * v[m].conj() * mass;
                self.entries[(m, n)] += e;
                if m != n {
                    self.entries[(n, m)] += e.conj();
                }
            }
        }
    }

    fn add_density(&mut self, t: &MomentTable, part: &Measure) {
        if let Measure::Radial { profile, cutoff } = part {
            // diagonal, with a radial rule that ends at the cutoff
            for (n, l) in radial_eigenvalues(profile, *cutoff, t, self.dim).into_iter().enumerate() {
                self.entries[(n, n)] += l;
            }
            return;
        }
        let m_ang = t.default_angles();
        let grid = t.disc_grid(m_ang);
        let dim = self.dim;
        let plan = fft_plan(m_ang, false);
        let rings: Vec<(Vec<f64>, Vec<Complex64>)> = (0..grid.n_rings())
            .into_par_iter()
            .filter_map(|ring| {
                let r = grid.ring_radius(ring);
                let mut g: Vec<Complex64> = (0..m_ang)
                    .map(|k| Complex64::new(part.density(Complex64::from_polar(r, grid.angle(k))), 0.0))
                    .collect();
                if g.iter().all(|v| v.re == 0.0) {
                    return None;
                }
                plan.process(&mut g);
                let half_log_w = 0.5 * grid.ring_weight(ring).ln();
                let phi = t.weight.phi_radial(r);
                let lm = r.ln();
                let a: Vec<f64> = (0..dim).map(|n| (log_basis(t, lm, phi, n) + half_log_w).exp()).collect();
                Some((a, g))
            })
            .collect();
        for n in 0..dim {
            for m in 0..=n {
                let mut s = Complex64::new(0.0, 0.0);
                let idx = (m as isize - n as isize).rem_euclid(m_ang as isize) as usize;
                for (a, g) in &rings {
                    s += g[idx] * (a[m] * a[n]);
                }
                self.entries[(m, n)] += s;
                if m != n {
                    self.entries[(n, m)] += s.conj();
                }
            }
        }
    }

    /// max |M - M^*|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                d = d.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// max |entry| off the diagonal.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i != j {
                    d = d.max(self.entries[(i, j)].norm());
                }
            }
        }
        d
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entries[(i, i)].re).sum()
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["m", "n", "re", "im"])?;
        for m in 0..self.dim {
            for n in 0..self.dim {
                let e = self.entries[(m, n)];
                wtr.write_record([m.to_string(), n.to_string(), format!("{:.17e}", e.re), format!("{:.17e}", e.im)])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Matrix action on coefficients in the e_n basis; shorter inputs are
/// zero-padded.
pub fn apply(m: &ToeplitzMatrix, f_coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    if f_coeffs.len() > m.dim {
        return Err(Error::Contract(format!(
            "{} coefficients for a {}-dimensional matrix",
            f_coeffs.len(),
            m.dim
        )));
    }
    Ok((0..m.dim)
        .map(|i| {
            f_coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| m.entries[(i, j)] * c)
                .sum()
        })
        .collect())
}

/// Coefficients of K_z in the e_n basis, up to a common positive factor.
fn kernel_coefficients(t: &MomentTable, z: Complex64, dim: usize) -> Vec<Complex64> {
    let r = z.norm();
    if r == 0.0 {
        let mut c = vec![Complex64::new(0.0, 0.0); dim];
        c[0] = Complex64::new(1.0, 0.0);
        return c;
    }
    let lm = r.ln();
    let logs: Vec<f64> = (0..dim).map(|n| log_basis(t, lm, 0.0, n)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unit = z.conj() / r;
    let mut phase = Complex64::new(1.0, 0.0);
    logs.iter()
        .map(|l| {
            let c = phase * (l - max).exp();
            phase *= unit;
            c
        })
        .collect()
}

/// T̃(z) = <T k_z, k_z> for the compressed operator.
pub fn operator_berezin(m: &ToeplitzMatrix, t: &MomentTable, z: Complex64) -> Result<f64> {
    t.weight.check_point(z)?;
    let c = kernel_coefficients(t, z, m.dim);
    let tc = apply(m, &c)?;
    let num: Complex64 = c.iter().zip(&tc).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = c.iter().map(|a| a.norm_sqr()).sum();
    Ok((num.re / den).max(0.0))
}

/// T̃ on every node of a polar grid. On a ring of radius s the quadratic
/// form is a trigonometric polynomial in the angle whose coefficients are
/// the weighted diagonal sums of the matrix, evaluated with one FFT.
pub fn operator_berezin_field(m: &ToeplitzMatrix, t: &MomentTable, grid: &DiscGrid) -> TransformField {
    let n_ang = grid.n_angles();
    let dim = m.dim;
    let plan = fft_plan(n_ang, true);
    let rows: Vec<Vec<f64>> = (0..grid.n_rings())
        .into_par_iter()
        .map(|ring| {
            let s = grid.ring_radius(ring);
            let lm = s.ln();
            let logs: Vec<f64> = (0..dim).map(|n| log_basis(t, lm, 0.0, n)).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let b: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let den: f64 = b.iter().map(|x| x * x).sum();
            // x_n(θ) = b_n e^{-inθ}; x^* T x = Σ_d e^{idθ} Σ_{m-n=d} b_m b_n T_mn
            let mut buf = vec![Complex64::new(0.0, 0.0); n_ang];
            for mi in 0..dim {
                for ni in 0..dim {
                    let d = (mi as isize - ni as isize).rem_euclid(n_ang as isize) as usize;
                    buf[d] += m.entries[(mi, ni)] * (b[mi] * b[ni]);
                }
            }
            plan.process(&mut buf);
            buf.iter().map(|v| (v.re / den).max(0.0)).collect()
        })
        .collect();
    TransformField {
        points: grid.points(),
        values: rows.concat(),
        kind: FieldKind::Berezin,
        grid: Some(grid.tag()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// (p, (Σ λ^p)^{1/p}).
    pub schatten: Vec<(f64, f64)>,
    pub operator_norm: f64,
    pub trace: f64,
    /// Smallest raw eigenvalue before clipping.
    pub min_raw: f64,
    /// λ_{N_T} / λ_max, a truncation diagnostic for small p.
    pub tail_ratio: f64,
}

impl SpectralReport {
    pub fn schatten(&self, p: f64) -> Option<f64> {
        self.schatten.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    pub fn export_eigenvalues_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["k", "lambda"])?;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            wtr.write_record([k.to_string(), format!("{l:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn schatten_norm(eigenvalues: &[f64], p: f64) -> f64 {
    lp_of(eigenvalues, p)
}

/// Full Hermitian eigendecomposition. Eigenvalues within the round-off floor
/// 64·ε·N·λ_max of zero are set to zero, so that small-p Schatten sums are
/// not dominated by noise.
pub fn spectrum(m: &ToeplitzMatrix, p_list: &[f64]) -> Result<SpectralReport> {
    if let Some(p) = p_list.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::param("p", *p, "p > 0"));
    }
    // normalised, with entries far below the noise floor flushed: a wide
    // dynamic range underflows inside the tridiagonalisation and yields NaN
    let scale = m.entries.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let mut raw: Vec<f64> = if scale == 0.0 {
        vec![0.0; m.dim]
    } else {
        let a = m.entries.map(|e| {
            let v = e / scale;
            if v.norm() < 1e-30 {
                Complex64::new(0.0, 0.0)
            } else {
                v
            }
        });
        SymmetricEigen::new(a).eigenvalues.iter().map(|l| l * scale).collect()
    };
    if raw.iter().any(|l| !l.is_finite()) {
        return Err(Error::Consistency("eigensolver returned a non-finite value".into()));
    }
    raw.sort_by(|a, b| b.total_cmp(a));
    let lambda_max = raw.first().copied().unwrap_or(0.0).max(0.0);
    let min_raw = raw.last().copied().unwrap_or(0.0);
    if min_raw < -1e-10 * lambda_max || (lambda_max == 0.0 && min_raw < 0.0) {
        return Err(Error::Consistency(format!(
            "toeplitz matrix is not positive semidefinite: min eigenvalue {min_raw:e}, max {lambda_max:e}"
        )));
    }
    let floor = 64.0 * f64::EPSILON * m.dim as f64 * lambda_max;
    let eigenvalues: Vec<f64> = raw.iter().map(|&l| if l <= floor { 0.0 } else { l }).collect();
    let trace = m.trace();
    let eig_sum: f64 = raw.iter().sum();
    if (trace - eig_sum).abs() > 1e-8 * trace.abs().max(f64::MIN_POSITIVE) && trace != 0.0 {
        return Err(Error::Consistency(format!("trace {trace} vs eigenvalue sum {eig_sum}")));
    }
    Ok(SpectralReport {
        schatten: p_list.iter().map(|&p| (p, schatten_norm(&eigenvalues, p))).collect(),
        operator_norm: lambda_max,
        trace,
        min_raw,
        tail_ratio: if lambda_max > 0.0 {
            eigenvalues.last().copied().unwrap_or(0.0) / lambda_max
        } else {
            0.0
        },
        eigenvalues,
    })
}

/// (R, ‖T_μ - T_{μ_R}‖) over an increasing sweep of radii.
pub fn compact_tail(mu: &Measure, t: &MomentTable, dim: usize, r_sweep: &[f64]) -> Result<Vec<(f64, f64)>> {
    if r_sweep.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("R sweep must be increasing".into()));
    }
    let full = ToeplitzMatrix::assemble(mu, t, dim)?;
    r_sweep
        .iter()
        .map(|&r| {
            let part = ToeplitzMatrix::assemble(&crate::measures::restrict_measure(mu, r), t, dim)?;
            let diff = ToeplitzMatrix {
                dim,
                entries: &full.entries - &part.entries,
            };
            if diff.entries.iter().all(|e| *e == Complex64::new(0.0, 0.0)) {
                return Ok((r, 0.0));
            }
            Ok((r, spectrum(&diff, &[])?.operator_norm))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchattenBounds {
    pub p: f64,
    pub schatten: f64,
    /// (∫ T̃^p dλ_ρ)^{1/p}.
    pub berezin_norm: f64,
    /// S_p / berezin_norm, the constant for p <= 1.
    pub upper_constant: Option<f64>,
    /// berezin_norm / S_p, the constant for p >= 1.
    pub lower_constant: Option<f64>,
}

/// Compares S_p with the dλ_ρ-norm of the Berezin symbol.
pub fn schatten_bounds_check(m: &ToeplitzMatrix, t: &MomentTable, p: f64, grid: &DiscGrid) -> Result<SchattenBounds> {
    let spec = spectrum(m, &[p])?;
    let sp = spec.schatten[0].1;
    let field = operator_berezin_field(m, t, grid);
    let bn = lp_norm(&field, p, BaseMeasure::LambdaRho, grid, &t.weight)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else if a == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(SchattenBounds {
        p,
        schatten: sp,
        berezin_norm: bn,
        upper_constant: (p <= 1.0).then(|| ratio(sp, bn)),
        lower_constant: (p >= 1.0).then(|| ratio(bn, sp)),
    })
}

/// The four Schatten-class quantities, for μ and for 10μ.
#[derive(Debug, Clone)]
struct SchattenInputs {
    eigenvalues: Vec<f64>,
    lattice: Vec<f64>,
    avg: TransformField,
    berezin: TransformField,
}

fn schatten_inputs(mu: &Measure, w: &WeightModel, t: &MomentTable, lat: &Lattice, delta: f64, dim: usize, grid: &DiscGrid) -> Result<SchattenInputs> {
    let m = ToeplitzMatrix::assemble(mu, t, dim)?;
    Ok(SchattenInputs {
        eigenvalues: spectrum(&m, &[])?.eigenvalues,
        lattice: lattice_terms(mu, w, lat, 0.0)?,
        avg: avg_function(mu, w, delta, grid)?,
        berezin: operator_berezin_field(&m, t, grid),
    })
}

pub const SCHATTEN_QUANTITIES: [&str; 4] = ["schatten_norm", "lattice_avg_lp", "avg_lp_lambda", "berezin_lp_lambda"];

/// For each p: S_p, (Σ_k μ̂_r(w_k)^p)^{1/p}, ‖μ̂_δ‖_{L^p(dλ_ρ)} and
/// ‖T̃_μ‖_{L^p(dλ_ρ)}, with ratios and drift under μ → 10μ.
#[allow(clippy::too_many_arguments)]
pub fn schatten_report(
    mu: &Measure,
    w: &WeightModel,
    t: &MomentTable,
    lat: &Lattice,
    delta: f64,
    p_list: &[f64],
    dim: usize,
    grid: &DiscGrid,
) -> Result<Vec<EquivalenceReport>> {
    let base = schatten_inputs(mu, w, t, lat, delta, dim, grid)?;
    let big = schatten_inputs(&mu.scaled(10.0), w, t, lat, delta, dim, grid)?;
    let eval = |s: &SchattenInputs, p: f64| -> Result<Vec<f64>> {
        Ok(vec![
            schatten_norm(&s.eigenvalues, p),
            lp_of(&s.lattice, p),
            lp_norm(&s.avg, p, BaseMeasure::LambdaRho, grid, w)?,
            lp_norm(&s.berezin, p, BaseMeasure::LambdaRho, grid, w)?,
        ])
    };
    p_list
        .iter()
        .map(|&p| {
            Ok(EquivalenceReport::new(
                "schatten",
                p,
                None,
                &SCHATTEN_QUANTITIES,
                eval(&base, p)?,
                eval(&big, p)?,
                10.0,
            ))
        })
        .collect()
}
