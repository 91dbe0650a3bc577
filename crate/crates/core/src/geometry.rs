//! Discs D^r(z) = D(z, r ρ(z)), (ρ, r)-lattices, the splitting of a lattice
//! into well-separated subsequences, and a grid approximation of the
//! metric d_ρ.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::halton_disc;
use crate::weights::WeightModel;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// The Euclidean disc D^r(z) as (center, radius).
pub fn disc(z: Complex64, r: f64, w: &WeightModel) -> (Complex64, f64) {
    (z, r * w.rho(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    /// Lattice scale, as a multiple of ρ.
    pub r: f64,
    /// Separation fraction in (0, 1).
    pub s: f64,
    pub r_max: f64,
    #[serde(default = "default_alpha_cap")]
    pub alpha_cap: f64,
    #[serde(default = "default_point_budget")]
    pub point_budget: usize,
    /// Number of low-discrepancy samples used to measure the multiplicity.
    #[serde(default = "default_multiplicity_samples")]
    pub multiplicity_samples: usize,
}

fn default_alpha_cap() -> f64 {
    0.5
}
fn default_point_budget() -> usize {
    50_000
}
fn default_multiplicity_samples() -> usize {
    100_000
}

impl LatticeParams {
    pub fn new(r: f64, s: f64, r_max: f64) -> Self {
        Self {
            r,
            s,
            r_max,
            alpha_cap: default_alpha_cap(),
            point_budget: default_point_budget(),
            multiplicity_samples: default_multiplicity_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= self.alpha_cap) {
            return Err(Error::param("r", self.r, "0 < r <= alpha_cap"));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::param("s", self.s, "0 < s < 1"));
        }
        if !(self.r_max > 0.0 && self.r_max <= 1.0) {
            return Err(Error::param("r_max", self.r_max, "0 < r_max <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub points: Vec<Complex64>,
    /// ρ at each point.
    pub rhos: Vec<f64>,
    pub params: LatticeParams,
    /// Measured covering multiplicity of {D^{2r}(w_k)}.
    pub multiplicity: usize,
    /// Rotation applied to the canonical construction (derived from the seed).
    pub rotation: f64,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn r(&self) -> f64 {
        self.params.r
    }

    pub fn index(&self, factor: f64) -> ScaledIndex {
        let mut idx = ScaledIndex::new(factor, self.rhos.iter().copied().fold(0.0, f64::max));
        for (k, (&p, &rho)) in self.points.iter().zip(&self.rhos).enumerate() {
            idx.insert(k, p, rho);
        }
        idx
    }

    /// Indices k with z ∈ D^{factor}(w_k).
    pub fn discs_containing(&self, idx: &ScaledIndex, z: Complex64, factor: f64) -> Vec<usize> {
        let mut out = Vec::new();
        idx.for_each_within(z, factor, |k, _| out.push(k));
        out.sort_unstable();
        out
    }

    /// Sample points not covered by any D^r(w_k).
    pub fn uncovered(&self, samples: &[Complex64]) -> Vec<Complex64> {
        let idx = self.index(self.params.r);
        samples
            .iter()
            .copied()
            .filter(|&z| !idx.any_within(z, self.params.r))
            .collect()
    }

    /// Pairs violating |w_k - w_j| >= s r min(ρ_k, ρ_j), by exhaustive scan.
    pub fn separation_violations(&self) -> usize {
        let t = self.params.s * self.params.r;
        let n = self.len();
        let mut bad = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (self.points[i] - self.points[j]).norm();
                if d < t * self.rhos[i].min(self.rhos[j]) {
                    bad += 1;
                }
            }
        }
        bad
    }

    /// Max over samples of #{k : z ∈ D^{factor}(w_k)}.
    pub fn max_overlap(&self, samples: &[Complex64], factor: f64) -> usize {
        let idx = self.index(factor);
        samples
            .iter()
            .map(|&z| {
                let mut c = 0;
                idx.for_each_within(z, factor, |_, _| c += 1);
                c
            })
            .max()
            .unwrap_or(0)
    }
}

/// Multi-scale spatial hash for points carrying a radius `factor * ρ`.
/// Points are bucketed by ρ in dyadic levels so that each level's cell is at
/// least as large as the largest radius it holds.
#[derive(Debug, Clone)]
pub struct ScaledIndex {
    factor: f64,
    rho_ref: f64,
    cells: FxHashMap<(u16, i64, i64), Vec<(usize, Complex64, f64)>>,
    levels: Vec<u16>,
}

impl ScaledIndex {
    pub fn new(factor: f64, rho_ref: f64) -> Self {
        Self {
            factor,
            rho_ref: rho_ref.max(f64::MIN_POSITIVE),
            cells: FxHashMap::default(),
            levels: Vec::new(),
        }
    }

    fn level_of(&self, rho: f64) -> u16 {
        if rho >= self.rho_ref {
            return 0;
        }
        ((self.rho_ref / rho).log2().floor().max(0.0) as u16).min(60)
    }

    fn cell_size(&self, level: u16) -> f64 {
        self.factor * self.rho_ref * 0.5f64.powi(level as i32)
    }

    fn key(&self, level: u16, z: Complex64) -> (u16, i64, i64) {
        let c = self.cell_size(level);
        (level, (z.re / c).floor() as i64, (z.im / c).floor() as i64)
    }

    pub fn insert(&mut self, id: usize, z: Complex64, rho: f64) {
        let level = self.level_of(rho);
        if !self.levels.contains(&level) {
            self.levels.push(level);
            self.levels.sort_unstable();
        }
        let key = self.key(level, z);
        self.cells.entry(key).or_default().push((id, z, rho));
    }

    /// Calls `f(id, rho)` for every stored point p with |z - p| < f ρ_p,
    /// for f <= the index factor.
    pub fn for_each_within(&self, z: Complex64, factor: f64, mut f: impl FnMut(usize, f64)) {
        debug_assert!(factor <= self.factor * (1.0 + 1e-12));
        for &level in &self.levels {
            let (_, cx, cy) = self.key(level, z);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(level, cx + dx, cy + dy)) {
                        for &(id, p, rho) in bucket {
                            if (z - p).norm() < factor * rho {
                                f(id, rho);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn any_within(&self, z: Complex64, factor: f64) -> bool {
        let mut hit = false;
        self.for_each_within(z, factor, |_, _| hit = true);
        hit
    }
}

/// ρ-adapted spiral of candidate points: concentric rings whose spacing and
/// angular step scale with ρ, each ring started at a golden-ratio phase.
fn spiral_candidates(w: &WeightModel, r_max: f64, spacing: f64) -> impl Iterator<Item = Complex64> + '_ {
    let mut rings = vec![0.0];
    let mut rad = 0.0;
    loop {
        let step = spacing * w.rho_radial(rad).min(w.rho_radial((rad + spacing * w.rho_radial(rad)).min(r_max)));
        rad += step.max(1e-9);
        if rad >= r_max {
            rings.push(r_max);
            break;
        }
        rings.push(rad);
    }
    rings.into_iter().enumerate().flat_map(move |(j, rad)| {
        let n = if rad == 0.0 {
            1
        } else {
            (TAU * rad / (spacing * w.rho_radial(rad))).ceil().max(1.0) as usize
        };
        let phase = (j as f64 * GOLDEN).fract();
        (0..n).map(move |i| Complex64::from_polar(rad, TAU * (i as f64 + phase) / n as f64))
    })
}

/// Greedy maximal s·r-separated set over a ρ-adapted spiral scan of the
/// truncated disc, patched until a low-discrepancy probe set is covered.
pub fn build_lattice(w: &WeightModel, params: &LatticeParams, seed: u64) -> Result<Lattice> {
    params.validate()?;
    let r = params.r;
    let sep = params.s * r;
    let r_max = params.r_max.min(w.r_max);
    let rho_ref = w.rho_radial(0.0).max(w.rho_radial(r_max));

    let mut points: Vec<Complex64> = Vec::new();
    let mut rhos: Vec<f64> = Vec::new();
    let mut index = ScaledIndex::new(2.0 * r, rho_ref);

    let try_add = |z: Complex64, points: &mut Vec<Complex64>, rhos: &mut Vec<f64>, index: &mut ScaledIndex| -> Result<bool> {
        let rho_z = w.rho(z);
        let mut clash = false;
        index.for_each_within(z, sep, |k, rho_k| {
            if (z - points[k]).norm() < sep * rho_z.min(rho_k) {
                clash = true;
            }
        });
        if clash {
            return Ok(false);
        }
        if points.len() >= params.point_budget {
            return Err(Error::Capacity {
                budget: params.point_budget,
                witness: z,
            });
        }
        index.insert(points.len(), z, rho_z);
        points.push(z);
        rhos.push(rho_z);
        Ok(true)
    };

    // candidate spacing small enough that maximality gives covering at scale r
    let spacing = ((1.0 - params.s) * r * 0.75).max(r / 32.0);
    for z in spiral_candidates(w, r_max, spacing) {
        try_add(z, &mut points, &mut rhos, &mut index)?;
    }

    // patch pass over low-discrepancy probes; an uncovered probe is at least
    // r·ρ away from every point, hence separated
    for round in 0..4u64 {
        let n = params.multiplicity_samples;
        let mut added = 0;
        for z in halton_disc(n, r_max, round * n as u64) {
            if !index.any_within(z, r) {
                if points.len() >= params.point_budget {
                    return Err(Error::Capacity {
                        budget: params.point_budget,
                        witness: z,
                    });
                }
                let rho_z = w.rho(z);
                index.insert(points.len(), z, rho_z);
                points.push(z);
                rhos.push(rho_z);
                added += 1;
            }
        }
        if added == 0 {
            break;
        }
    }

    let mut lattice = Lattice {
        points,
        rhos,
        params: *params,
        multiplicity: 0,
        rotation: 0.0,
    };
    let samples = halton_disc(params.multiplicity_samples, r_max, 0);
    lattice.multiplicity = lattice.max_overlap(&samples, 2.0 * r);

    let rotation = if seed == 0 {
        0.0
    } else {
        TAU * (seed as f64 * GOLDEN).fract()
    };
    if rotation != 0.0 {
        let rot = Complex64::from_polar(1.0, rotation);
        for p in &mut lattice.points {
            *p *= rot;
        }
        lattice.rotation = rotation;
    }
    Ok(lattice)
}

/// Splits a lattice into subsequences whose points are 2^k r-separated,
/// by repeated greedy extraction of maximal subsequences in lattice order.
pub fn split_lattice(lat: &Lattice, k: u32) -> Vec<Lattice> {
    split_lattice_scaled(lat, 2f64.powi(k as i32))
}

/// As [`split_lattice`] with an arbitrary separation multiplier.
pub fn split_lattice_scaled(lat: &Lattice, scale: f64) -> Vec<Lattice> {
    let t = scale * lat.params.r;
    let rho_ref = lat.rhos.iter().copied().fold(0.0, f64::max);
    let mut remaining: Vec<usize> = (0..lat.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut idx = ScaledIndex::new(t, rho_ref);
        let mut chosen = Vec::new();
        let mut rest = Vec::new();
        for &i in &remaining {
            let z = lat.points[i];
            let rz = lat.rhos[i];
            let mut clash = false;
            idx.for_each_within(z, t, |j, rj| {
                if (z - lat.points[j]).norm() < t * rz.min(rj) {
                    clash = true;
                }
            });
            if clash {
                rest.push(i);
            } else {
                idx.insert(i, z, rz);
                chosen.push(i);
            }
        }
        out.push(Lattice {
            points: chosen.iter().map(|&i| lat.points[i]).collect(),
            rhos: chosen.iter().map(|&i| lat.rhos[i]).collect(),
            params: lat.params,
            multiplicity: lat.multiplicity,
            rotation: lat.rotation,
        });
        remaining = rest;
    }
    out
}

/// Polar grid graph approximating d_ρ. Nodes sit at radii i·r_max/n_r
/// (i = 1..n_r) and angles 2πj/n_θ, plus one node at the origin. Edges join
/// nodes whose index offset is a primitive vector within `reach` local cell
/// sizes; edge weight is |Δz| / ρ(midpoint).
#[derive(Debug, Clone)]
pub struct MetricGrid {
    pub weight: WeightModel,
    pub n_r: usize,
    pub n_theta: usize,
    pub r_max: f64,
    pub reach: usize,
    stencils: Vec<Vec<(i32, i32)>>,
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl MetricGrid {
    pub fn new(weight: &WeightModel, n_r: usize, n_theta: usize, reach: usize) -> Result<Self> {
        if n_r < 2 || n_theta < 8 || reach == 0 {
            return Err(Error::Contract(format!(
                "metric grid {n_r}x{n_theta} (reach {reach}) is too coarse"
            )));
        }
        let r_max = weight.r_max;
        let dr = r_max / n_r as f64;
        let dth = TAU / n_theta as f64;
        let k = reach as f64;
        let half = (n_theta / 2) as i64;
        let mut stencils = vec![Vec::new(); n_r + 1];
        for (i, stencil) in stencils.iter_mut().enumerate().skip(1) {
            let di_max = n_r as i64;
            for di in -di_max..=di_max {
                let ip = i as i64 + di;
                if ip < 1 || ip > n_r as i64 {
                    continue;
                }
                let inner = (i as i64).min(ip) as f64;
                let a = dr;
                let b = inner * dr * dth;
                let big = a.max(b);
                if (di.abs() as f64) * a > k * big + 1e-15 {
                    continue;
                }
                let dj_max = ((k * big / b).floor() as i64).min(half);
                for dj in -dj_max..=dj_max {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    if gcd(di, dj) != 1 {
                        continue;
                    }
                    stencil.push((di as i32, dj as i32));
                }
            }
        }
        Ok(Self {
            weight: *weight,
            n_r,
            n_theta,
            r_max,
            reach,
            stencils,
        })
    }

    pub fn n_nodes(&self) -> usize {
        1 + self.n_r * self.n_theta
    }

    pub fn node_point(&self, node: usize) -> Complex64 {
        if node == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let i = (node - 1) / self.n_theta + 1;
        let j = (node - 1) % self.n_theta;
        Complex64::from_polar(
            self.r_max * i as f64 / self.n_r as f64,
            TAU * j as f64 / self.n_theta as f64,
        )
    }

    fn node_id(&self, i: usize, j: usize) -> usize {
        1 + (i - 1) * self.n_theta + j
    }

    pub fn nearest_node(&self, z: Complex64) -> usize {
        let dr = self.r_max / self.n_r as f64;
        let i = (z.norm() / dr).round() as usize;
        if i == 0 {
            return 0;
        }
        let i = i.min(self.n_r);
        let mut th = z.arg();
        if th < 0.0 {
            th += TAU;
        }
        let j = (th / (TAU / self.n_theta as f64)).round() as usize % self.n_theta;
        self.node_id(i, j)
    }

    fn edge_weight(&self, a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / self.weight.rho(0.5 * (a + b))
    }

    fn for_each_neighbor(&self, node: usize, mut f: impl FnMut(usize)) {
        let reach = self.reach;
        if node == 0 {
            for i in 1..=reach.min(self.n_r) {
                for j in 0..self.n_theta {
                    f(self.node_id(i, j));
                }
            }
            return;
        }
        let i = (node - 1) / self.n_theta + 1;
        let j = (node - 1) % self.n_theta;
        if i <= reach {
            f(0);
        }
        let n = self.n_theta as i64;
        for &(di, dj) in &self.stencils[i] {
            let ip = (i as i64 + di as i64) as usize;
            let jp = (j as i64 + dj as i64).rem_euclid(n) as usize;
            f(self.node_id(ip, jp));
        }
    }

    /// Single-source shortest path lengths to every node.
    pub fn distances_from(&self, z: Complex64) -> Vec<f64> {
        let src = self.nearest_node(z);
        self.dijkstra(src, None)
    }

    fn dijkstra(&self, src: usize, target: Option<usize>) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.n_nodes()];
        let mut done = vec![false; self.n_nodes()];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if Some(u) == target {
                break;
            }
            let pu = self.node_point(u);
            self.for_each_neighbor(u, |v| {
                if done[v] {
                    return;
                }
                let nd = d + self.edge_weight(pu, self.node_point(v));
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapItem(nd, v));
                }
            });
        }
        dist
    }

    pub fn distance_at(&self, dist: &[f64], w: Complex64) -> f64 {
        dist[self.nearest_node(w)]
    }
}

/// Grid approximation of d_ρ(z, w).
pub fn approx_distance(grid: &MetricGrid, z: Complex64, w_pt: Complex64) -> Result<f64> {
    for p in [z, w_pt] {
        if p.norm() > grid.r_max {
            return Err(Error::Domain {
                point: p,
                r_max: grid.r_max,
            });
        }
    }
    let (a, b) = (grid.nearest_node(z), grid.nearest_node(w_pt));
    if a == b {
        return Ok(0.0);
    }
    let dist = grid.dijkstra(a, Some(b));
    Ok(dist[b])
}

#[derive(Debug, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by node id for determinism
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Ratio max(ρ(z), ρ(w)) / min(ρ(z), ρ(w)).
pub fn rho_ratio(w: &WeightModel, a: Complex64, b: Complex64) -> f64 {
    let (x, y) = (w.rho(a), w.rho(b));
    x.max(y) / x.min(y)
}

/// Evenly spread points on circles, used as test nets.
pub fn radial_angular_samples(n_radii: usize, n_angles: usize, r_lo: f64, r_hi: f64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n_radii * n_angles);
    for i in 0..n_radii {
        let t = if n_radii == 1 {
            0.0
        } else {
            i as f64 / (n_radii - 1) as f64
        };
        let rad = r_lo + t * (r_hi - r_lo);
        for j in 0..n_angles {
            let th = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / n_angles as f64;
            out.push(Complex64::from_polar(rad, th));
        }
    }
    out
}
