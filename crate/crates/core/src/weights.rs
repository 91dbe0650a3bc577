//! Weight models φ with closed-form Laplacian and radius function
//! ρ = (Δφ)^(-1/2), plus numerical diagnostics of class membership.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_R_MAX: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// φ(z) = A (1 - |z|²)^(-α).
    Exp { amplitude: f64, exponent: f64 },
    /// φ ≡ 0 with ρ ≡ 1 imposed. Kernel oracle only: K(z, w) = (1 - z w̄)^(-2).
    Flat,
    /// φ(z) = |z|² / (4c²), so that ρ ≡ c. Geometry oracle only.
    ConstantRho { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    pub family: WeightFamily,
    pub r_max: f64,
}

/// Build a weight from a family name (`exp`, `flat`, `constant_rho`).
/// For `constant_rho` the amplitude is the constant value of ρ and the
/// exponent is ignored.
pub fn make_weight(family: &str, amplitude: f64, exponent: f64, r_max: f64) -> Result<WeightModel> {
    match family.to_ascii_lowercase().as_str() {
        "exp" => WeightModel::exp(amplitude, exponent, r_max),
        "flat" => WeightModel::flat(r_max),
        "constant_rho" | "const_rho" => WeightModel::constant_rho(amplitude, r_max),
        _ => Err(Error::Contract(format!("unknown weight family `{family}`"))),
    }
}

impl WeightModel {
    pub fn exp(amplitude: f64, exponent: f64, r_max: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::param("A", amplitude, "A > 0"));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::param("alpha", exponent, "alpha > 0"));
        }
        check_r_max(r_max, false)?;
        Ok(Self {
            family: WeightFamily::Exp {
                amplitude,
                exponent,
            },
            r_max,
        })
    }

    /// The unweighted Bergman space; `r_max = 1` is allowed here.
    pub fn flat(r_max: f64) -> Result<Self> {
        check_r_max(r_max, true)?;
        Ok(Self {
            family: WeightFamily::Flat,
            r_max,
        })
    }

    pub fn constant_rho(rho: f64, r_max: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", rho, "rho > 0"));
        }
        check_r_max(r_max, false)?;
        Ok(Self {
            family: WeightFamily::ConstantRho { rho },
            r_max,
        })
    }

    pub fn name(&self) -> String {
        match self.family {
            WeightFamily::Exp {
                amplitude,
                exponent,
            } => format!("EXP({amplitude},{exponent})"),
            WeightFamily::Flat => "FLAT".to_string(),
            WeightFamily::ConstantRho { rho } => format!("CONST_RHO({rho})"),
        }
    }

    /// Oracle weights are excluded from every assertion that needs φ ∈ W₀.
    pub fn is_oracle(&self) -> bool {
        !matches!(self.family, WeightFamily::Exp { .. })
    }

    pub fn is_radial(&self) -> bool {
        true
    }

    pub fn phi(&self, z: Complex64) -> f64 {
        self.phi_radial(z.norm())
    }

    pub fn phi_radial(&self, r: f64) -> f64 {
        let u = r * r;
        match self.family {
            WeightFamily::Exp {
                amplitude,
                exponent,
            } => amplitude * (1.0 - u).powf(-exponent),
            WeightFamily::Flat => 0.0,
            WeightFamily::ConstantRho { rho } => u / (4.0 * rho * rho),
        }
    }

    pub fn laplacian_phi(&self, z: Complex64) -> f64 {
        self.laplacian_radial(z.norm())
    }

    /// Δφ = 4 (f'(u) + u f''(u)) for φ = f(|z|²).
    pub fn laplacian_radial(&self, r: f64) -> f64 {
        let u = r * r;
        match self.family {
            WeightFamily::Exp {
                amplitude,
                exponent,
            } => 4.0 * amplitude * exponent * (1.0 + exponent * u) * (1.0 - u).powf(-exponent - 2.0),
            WeightFamily::Flat => 0.0,
            WeightFamily::ConstantRho { rho } => 1.0 / (rho * rho),
        }
    }

    pub fn rho(&self, z: Complex64) -> f64 {
        self.rho_radial(z.norm())
    }

    pub fn rho_radial(&self, r: f64) -> f64 {
        match self.family {
            WeightFamily::Flat => 1.0,
            WeightFamily::ConstantRho { rho } => rho,
            WeightFamily::Exp { .. } => self.laplacian_radial(r).powf(-0.5),
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.norm() <= self.r_max
    }

    pub fn check_point(&self, z: Complex64) -> Result<()> {
        if self.contains(z) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: z,
                r_max: self.r_max,
            })
        }
    }
}

fn check_r_max(r_max: f64, allow_one: bool) -> Result<()> {
    let ok = r_max > 0.0 && (r_max < 1.0 || (allow_one && r_max == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::param("r_max", r_max, "0 < r_max < 1"))
    }
}

/// Centered 5-point finite-difference Laplacian of φ.
pub fn fd_laplacian(w: &WeightModel, z: Complex64, h: f64) -> f64 {
    let f = |dz: Complex64| w.phi(z + dz);
    let c = f(Complex64::new(0.0, 0.0));
    (f(Complex64::new(h, 0.0))
        + f(Complex64::new(-h, 0.0))
        + f(Complex64::new(0.0, h))
        + f(Complex64::new(0.0, -h))
        - 4.0 * c)
        / (h * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub min_laplacian: f64,
    pub lipschitz_estimate: f64,
    /// (t, sup |ρ(z) - ρ(w)| / |z - w| over sampled pairs with |z|, |w| >= t)
    pub l0_decay: Vec<(f64, f64)>,
    /// Smallest s with ρ(z) <= s (1 - |z|) over the samples.
    pub rho_over_one_minus_mod: f64,
    pub oracle: bool,
}

impl MembershipReport {
    pub fn decay_at(&self, t: f64) -> Option<f64> {
        self.l0_decay
            .iter()
            .find(|(ti, _)| (ti - t).abs() < 1e-12)
            .map(|&(_, q)| q)
    }
}

/// Sampled diagnostics of Δφ > 0, ‖ρ‖_L and the vanishing boundary
/// Lipschitz constant. Deterministic given `seed`.
pub fn check_membership(w: &WeightModel, n_samples: usize, seed: u64) -> Result<MembershipReport> {
    if n_samples < 100 {
        return Err(Error::param("n_samples", n_samples as f64, "n_samples >= 100"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_max = w.r_max;
    let thresholds: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();

    let mut min_lap = w.laplacian_radial(0.0);
    let mut s_max: f64 = 0.0;
    for _ in 0..n_samples {
        let z = uniform_in_annulus(&mut rng, 0.0, r_max);
        min_lap = min_lap.min(w.laplacian_phi(z));
        let r = z.norm();
        if r < 1.0 {
            s_max = s_max.max(w.rho(z) / (1.0 - r));
        }
    }

    // stratified pair pool: each threshold contributes pairs from its own
    // annulus, and every sup is taken over the whole pool, so the table is
    // monotone by construction
    let mut pairs: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * n_samples * thresholds.len());
    let per_band = n_samples;
    for &t in &thresholds {
        if t >= r_max {
            continue;
        }
        for i in 0..per_band {
            let z = uniform_in_annulus(&mut rng, t, r_max);
            let w_pt = if i % 2 == 0 {
                // close pair: local gradient
                let h = 1e-3 * (r_max - t).max(1e-3);
                let cand = z + Complex64::from_polar(h, rng.gen::<f64>() * std::f64::consts::TAU);
                if cand.norm() > r_max || cand.norm() < t {
                    continue;
                }
                cand
            } else {
                uniform_in_annulus(&mut rng, t, r_max)
            };
            let d = (z - w_pt).norm();
            if d == 0.0 {
                continue;
            }
            let q = (w.rho(z) - w.rho(w_pt)).abs() / d;
            pairs.push((z.norm(), w_pt.norm(), q));
        }
    }
    let l0_decay: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let sup = pairs
                .iter()
                .filter(|(a, b, _)| *a >= t && *b >= t)
                .map(|&(_, _, q)| q)
                .fold(0.0, f64::max);
            (t, sup)
        })
        .collect();
    let lipschitz_estimate = l0_decay.first().map(|&(_, q)| q).unwrap_or(0.0);

    Ok(MembershipReport {
        min_laplacian: min_lap,
        lipschitz_estimate,
        l0_decay,
        rho_over_one_minus_mod: s_max,
        oracle: w.is_oracle(),
    })
}

pub(crate) fn uniform_in_annulus(rng: &mut impl Rng, inner: f64, outer: f64) -> Complex64 {
    let u: f64 = rng.gen();
    let r = (inner * inner + u * (outer * outer - inner * inner)).sqrt();
    Complex64::from_polar(r, rng.gen::<f64>() * std::f64::consts::TAU)
}
