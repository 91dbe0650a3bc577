//! Gauss–Legendre rules, graded radial rules and the polar product grid
//! every disc integral in the crate is computed on.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// by Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on [0, upper] whose panels halve in width
/// towards `upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialRule {
    pub upper: f64,
    pub levels: usize,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RadialRule {
    /// Breakpoints 0, U/2, 3U/4, ..., U(1 - 2^-levels), U.
    pub fn graded(upper: f64, levels: usize, order: usize) -> Self {
        let (nodes, weights) = graded_panels(0.0, upper, levels, order);
        Self {
            upper,
            levels,
            order,
            nodes,
            weights,
        }
    }

    /// The same grading with two more levels and every panel split in half.
    pub fn refined(&self) -> Self {
        let mut bps = vec![0.0];
        for k in 1..=self.levels + 2 {
            bps.push(self.upper * (1.0 - 0.5f64.powi(k as i32)));
        }
        bps.push(self.upper);
        let mut fine = Vec::with_capacity(2 * bps.len());
        for w in bps.windows(2) {
            fine.push(w[0]);
            fine.push(0.5 * (w[0] + w[1]));
        }
        fine.push(self.upper);
        let (nodes, weights) = composite(&fine, self.order);
        Self {
            upper: self.upper,
            levels: self.levels + 2,
            order: self.order,
            nodes,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * f(r))
            .sum()
    }

    /// log ∫ exp(log_f(r)) dr, without ever exponentiating a large value.
    pub fn log_integrate(&self, log_f: impl Fn(f64) -> f64) -> f64 {
        log_sum_exp(
            self.nodes
                .iter()
                .zip(&self.weights)
                .map(|(&r, &w)| w.ln() + log_f(r)),
        )
    }
}

/// Nodes and weights of the graded rule moved onto [lower, upper].
pub fn graded_panels(lower: f64, upper: f64, levels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut bps = vec![lower];
    for k in 1..=levels {
        bps.push(lower + (upper - lower) * (1.0 - 0.5f64.powi(k as i32)));
    }
    bps.push(upper);
    composite(&bps, order)
}

fn composite(breakpoints: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(order * breakpoints.len());
    let mut weights = Vec::with_capacity(order * breakpoints.len());
    for pair in breakpoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(mid + half * xi);
            weights.push(half * wi);
        }
    }
    (nodes, weights)
}

/// Nodes/weights for ∫_a^b f(t) dt under t = a + (b-a)(1-cos u)/2, which
/// clusters nodes at both ends and removes square-root endpoint behaviour.
pub fn cosine_mapped_rule(a: f64, b: f64, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| {
            // u in [0, pi]
            let u = 0.5 * PI * (xi + 1.0);
            let t = a + half * (1.0 - u.cos());
            let dt = half * u.sin() * 0.5 * PI;
            (t, wi * dt)
        })
        .collect()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Grid specification for the polar product grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub upper: f64,
    pub levels: usize,
    pub order: usize,
    pub n_angles: usize,
}

/// Polar product grid on {|z| <= upper}: a graded radial rule times a
/// uniform angular rule. Weights are for the normalised area measure
/// dA = dx dy / pi, so they sum to upper^2.
#[derive(Debug, Clone)]
pub struct DiscGrid {
    pub spec: GridSpec,
    pub radial: RadialRule,
}

impl DiscGrid {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            radial: RadialRule::graded(spec.upper, spec.levels, spec.order),
            spec,
        }
    }

    pub fn from_rule(radial: RadialRule, n_angles: usize) -> Self {
        Self {
            spec: GridSpec {
                upper: radial.upper,
                levels: radial.levels,
                order: radial.order,
                n_angles,
            },
            radial,
        }
    }

    pub fn n_rings(&self) -> usize {
        self.radial.len()
    }

    pub fn n_angles(&self) -> usize {
        self.spec.n_angles
    }

    pub fn len(&self) -> usize {
        self.n_rings() * self.n_angles()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ring_radius(&self, ring: usize) -> f64 {
        self.radial.nodes[ring]
    }

    /// dA-weight shared by every node of a ring.
    pub fn ring_weight(&self, ring: usize) -> f64 {
        self.radial.weights[ring] * self.radial.nodes[ring] * 2.0 / self.n_angles() as f64
    }

    pub fn angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_angles() as f64
    }

    pub fn point(&self, idx: usize) -> Complex64 {
        let (ring, k) = (idx / self.n_angles(), idx % self.n_angles());
        Complex64::from_polar(self.ring_radius(ring), self.angle(k))
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.ring_weight(idx / self.n_angles())
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Identifier used to check that a sampled field lives on this grid.
    pub fn tag(&self) -> GridTag {
        GridTag {
            upper_bits: self.spec.upper.to_bits(),
            levels: self.spec.levels,
            order: self.spec.order,
            n_angles: self.spec.n_angles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridTag {
    upper_bits: u64,
    levels: usize,
    order: usize,
    n_angles: usize,
}

/// Shared FFT plans, keyed by length.
pub fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    type Plans = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;
    static PLANS: OnceLock<Plans> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan cache poisoned");
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// Van der Corput radical inverse.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while i > 0 {
        x += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    x
}

/// `n` Halton(2,3) points mapped area-uniformly onto {|z| <= radius}.
pub fn halton_disc(n: usize, radius: f64, start: u64) -> Vec<Complex64> {
    (0..n as u64)
        .map(|i| {
            let u = radical_inverse(start + i + 1, 2);
            let v = radical_inverse(start + i + 1, 3);
            Complex64::from_polar(radius * u.sqrt(), 2.0 * PI * v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg)).sum();
            let exact = if deg % 2 == 1 {
                0.0
            } else {
                2.0 / (deg as f64 + 1.0)
            };
            assert!((q - exact).abs() < 1e-14, "deg {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn large_rule_weights_sum_to_two() {
        let (_, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn graded_rule_has_expected_panels() {
        let rule = RadialRule::graded(0.95, 12, 32);
        assert_eq!(rule.len(), 13 * 32);
        let len: f64 = rule.weights.iter().sum();
        assert!((len - 0.95).abs() < 1e-14);
        assert!(rule.nodes.iter().all(|&r| r > 0.0 && r < 0.95));
        let refined = rule.refined();
        assert!(refined.len() > rule.len());
    }

    #[test]
    fn disc_grid_weights_sum_to_normalised_area() {
        let grid = DiscGrid::new(GridSpec {
            upper: 0.9,
            levels: 6,
            order: 8,
            n_angles: 64,
        });
        let total: f64 = (0..grid.len()).map(|i| grid.weight(i)).sum();
        assert!((total - 0.81).abs() < 1e-13);
    }

    #[test]
    fn cosine_mapped_rule_handles_sqrt_endpoints() {
        // ∫_0^1 sqrt(t(1-t)) dt = pi/8
        let q: f64 = cosine_mapped_rule(0.0, 1.0, 24)
            .iter()
            .map(|&(t, w)| w * (t * (1.0 - t)).sqrt())
            .sum();
        assert!((q - PI / 8.0).abs() < 1e-10);
    }

    #[test]
    fn halton_points_stay_in_disc() {
        let pts = halton_disc(1000, 0.5, 0);
        assert!(pts.iter().all(|z| z.norm() <= 0.5));
    }
}
