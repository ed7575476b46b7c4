//! Discretized load space, empirical nominal law and Gaussian reference marginals.
//!
//! All integrals over the load space are finite sums over a fixed node set
//! inside the closed ball of radius `R`. Reference weights are stored as
//! logarithms: with `σ = 1e-3` the Gaussian weight of a node at distance 2
//! from the sample is `e^{-2000}`, far below the smallest normal `f64`.

use std::collections::HashSet;

use crate::error::{Error, Result};

pub type Load = [f64; 2];

/// Relative slack on `|ζ| ≤ R` absorbing rounding of lattice coordinates.
pub const BALL_TOLERANCE: f64 = 1e-12;

/// `c(ξ, ζ) = |ξ − ζ|²`.
pub fn ground_cost(xi: Load, zeta: Load) -> f64 {
    let dx = xi[0] - zeta[0];
    let dy = xi[1] - zeta[1];
    dx * dx + dy * dy
}

fn norm(v: Load) -> f64 {
    v[0].hypot(v[1])
}

/// Parameters for [`build_load_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub radius: f64,
    pub spacing: f64,
    pub refinement_centers: Vec<Load>,
    pub refinement_spacing: f64,
    /// Half-width of each refined patch; `10·√(2σ)` by default.
    pub refinement_radius: f64,
    pub max_nodes: usize,
}

impl GridSpec {
    pub fn refinement_radius_for_sigma(sigma: f64) -> f64 {
        10.0 * (2.0 * sigma).sqrt()
    }
}

/// Finite ground set `{ζ_j}` discretizing the ball `Ξ = B(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpaceDiscretization {
    radius: f64,
    spacing: f64,
    nodes: Vec<Load>,
}

impl LoadSpaceDiscretization {
    /// Ground set from an explicit node list. `spacing` bounds admissible snap distances.
    pub fn from_nodes(radius: f64, spacing: f64, nodes: Vec<Load>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("uncertainty.radius must be positive, got {radius}")));
        }
        if nodes.is_empty() {
            return Err(Error::config("uncertainty: load grid is empty"));
        }
        if let Some(z) = nodes.iter().find(|z| norm(**z) > radius * (1.0 + BALL_TOLERANCE)) {
            return Err(Error::domain(format!("load node {z:?} lies outside the ball of radius {radius}")));
        }
        let mut seen = HashSet::with_capacity(nodes.len());
        for z in &nodes {
            if !seen.insert((z[0].to_bits(), z[1].to_bits())) {
                return Err(Error::domain(format!("duplicate load node {z:?}")));
            }
        }
        Ok(LoadSpaceDiscretization {
            radius,
            spacing,
            nodes,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[Load] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index and distance of the node closest to `point` (first on ties).
    pub fn nearest(&self, point: Load) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, z) in self.nodes.iter().enumerate() {
            let d = ground_cost(point, *z);
            if d < best.1 {
                best = (j, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Cartesian grid of step `spacing` clipped to the ball, merged with fine
/// local grids of step `refinement_spacing` around each refinement center.
pub fn build_load_grid(spec: &GridSpec) -> Result<LoadSpaceDiscretization> {
    let GridSpec {
        radius,
        spacing,
        ref refinement_centers,
        refinement_spacing,
        refinement_radius,
        max_nodes,
    } = *spec;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config(format!("uncertainty.radius must be positive, got {radius}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::config(format!("uncertainty.spacing must be positive, got {spacing}")));
    }
    if !refinement_centers.is_empty()
        && !(refinement_spacing > 0.0 && refinement_spacing <= spacing)
    {
        return Err(Error::config(format!(
            "uncertainty.refinement_spacing must lie in (0, spacing], got {refinement_spacing}"
        )));
    }
    let estimate = |r: f64, h: f64| std::f64::consts::PI * (r / h + 1.0).powi(2);
    let mut expected = estimate(radius, spacing);
    if !refinement_centers.is_empty() {
        expected += refinement_centers.len() as f64 * estimate(refinement_radius, refinement_spacing);
    }
    if expected > 1.5 * max_nodes as f64 {
        return Err(Error::config(format!(
            "uncertainty.spacing: about {expected:.0} load nodes would exceed the cap of {max_nodes}"
        )));
    }

    let limit = radius * (1.0 + BALL_TOLERANCE);
    // merge key: coordinates on a lattice much finer than any grid step
    let quantum = 1e-6 * refinement_spacing.min(spacing).max(f64::MIN_POSITIVE);
    let key = |z: Load| ((z[0] / quantum).round() as i64, (z[1] / quantum).round() as i64);
    let mut seen = HashSet::new();
    let mut nodes = Vec::new();
    let mut push = |z: Load, nodes: &mut Vec<Load>| -> Result<()> {
        if norm(z) <= limit && seen.insert(key(z)) {
            nodes.push(z);
            if nodes.len() > max_nodes {
                return Err(Error::config(format!(
                    "uncertainty.spacing: load grid exceeds the cap of {max_nodes} nodes"
                )));
            }
        }
        Ok(())
    };

    let n = (radius / spacing).floor() as i64;
    for j in -n..=n {
        for i in -n..=n {
            push([i as f64 * spacing, j as f64 * spacing], &mut nodes)?;
        }
    }
    for c in refinement_centers {
        let n = (refinement_radius / refinement_spacing).floor() as i64;
        for j in -n..=n {
            for i in -n..=n {
                let (dx, dy) = (i as f64 * refinement_spacing, j as f64 * refinement_spacing);
                if dx.hypot(dy) <= refinement_radius {
                    push([c[0] + dx, c[1] + dy], &mut nodes)?;
                }
            }
        }
    }
    if nodes.is_empty() {
        nodes.push([0.0, 0.0]);
    }
    LoadSpaceDiscretization::from_nodes(radius, spacing, nodes)
}

/// Empirical law `P = (1/N) Σ δ_{ξ_i}` with samples snapped onto grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalLaw {
    samples: Vec<Load>,
    node_index: Vec<usize>,
    snap_distance: Vec<f64>,
}

impl NominalLaw {
    pub fn snap(grid: &LoadSpaceDiscretization, raw: &[Load]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::config("uncertainty.samples must not be empty"));
        }
        let mut samples = Vec::with_capacity(raw.len());
        let mut node_index = Vec::with_capacity(raw.len());
        let mut snap_distance = Vec::with_capacity(raw.len());
        for (i, &xi) in raw.iter().enumerate() {
            if norm(xi) > grid.radius() * (1.0 + BALL_TOLERANCE) {
                return Err(Error::config(format!(
                    "uncertainty.samples[{i}] = {xi:?} lies outside the ball of radius {}",
                    grid.radius()
                )));
            }
            let (j, d) = grid.nearest(xi);
            if d >= grid.spacing() {
                return Err(Error::config(format!(
                    "uncertainty.samples[{i}]: snap distance {d} is not below the grid spacing {}",
                    grid.spacing()
                )));
            }
            samples.push(grid.nodes()[j]);
            node_index.push(j);
            snap_distance.push(d);
        }
        Ok(NominalLaw {
            samples,
            node_index,
            snap_distance,
        })
    }

    pub fn samples(&self) -> &[Load] {
        &self.samples
    }

    pub fn node_index(&self) -> &[usize] {
        &self.node_index
    }

    pub fn snap_distances(&self) -> &[f64] {
        &self.snap_distance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }
}

/// Discretely normalized Gaussian marginals `ν_ij ∝ exp(−c(ξ_i, ζ_j) / (2σ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMarginals {
    sigma: f64,
    n_nodes: usize,
    costs: Vec<f64>,
    log_weights: Vec<f64>,
    log_normalizers: Vec<f64>,
}

impl ReferenceMarginals {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_samples(&self) -> usize {
        self.log_normalizers.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Ground costs `c(ξ_i, ζ_j)` of row `i`.
    pub fn cost_row(&self, i: usize) -> &[f64] {
        &self.costs[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    /// `log ν_ij` for row `i`.
    pub fn log_weight_row(&self, i: usize) -> &[f64] {
        &self.log_weights[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.log_weights[i * self.n_nodes + j].exp()
    }

    pub fn weight_row(&self, i: usize) -> Vec<f64> {
        self.log_weight_row(i).iter().map(|l| l.exp()).collect()
    }

    /// `log α_i`, the log of the normalization factor of row `i`.
    pub fn log_normalizer(&self, i: usize) -> f64 {
        self.log_normalizers[i]
    }
}

pub fn reference_marginals(
    grid: &LoadSpaceDiscretization,
    nominal: &NominalLaw,
    sigma: f64,
) -> Result<ReferenceMarginals> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let k = grid.len();
    let mut costs = Vec::with_capacity(nominal.len() * k);
    let mut log_weights = Vec::with_capacity(nominal.len() * k);
    let mut log_normalizers = Vec::with_capacity(nominal.len());
    for &xi in nominal.samples() {
        let row: Vec<f64> = grid.nodes().iter().map(|&z| ground_cost(xi, z)).collect();
        let exps: Vec<f64> = row.iter().map(|c| -c / (2.0 * sigma)).collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
        log_weights.extend(exps.iter().map(|e| e - log_z));
        log_normalizers.push(-log_z);
        costs.extend(row);
    }
    Ok(ReferenceMarginals {
        sigma,
        n_nodes: k,
        costs,
        log_weights,
        log_normalizers,
    })
}
