//! Brute-force reference implementations for verification.
//!
//! Nothing here shares code with the production paths: the transport solver
//! has its own log-domain reductions and the linear algebra is dense.

use crate::elasticity::{element_stiffness, IsotropicHooke, Mesh2D};
use crate::error::{Error, Result};

/// Discrete transport between `N` source atoms and `K` target atoms.
#[derive(Debug, Clone)]
pub struct DiscreteTransportProblem {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// Row-major `N × K`.
    pub cost: Vec<f64>,
    /// Row-major `N × K` reference coupling; row sums equal `source`.
    pub reference: Vec<f64>,
    pub epsilon: f64,
}

impl DiscreteTransportProblem {
    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn with_target(&self, target: Vec<f64>) -> Self {
        DiscreteTransportProblem {
            target,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_source(), self.n_target());
        if n == 0 || k == 0 {
            return Err(Error::domain("empty transport problem"));
        }
        if self.cost.len() != n * k || self.reference.len() != n * k {
            return Err(Error::domain("cost and reference must be N x K"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        for (name, w) in [("source", &self.source), ("target", &self.target)] {
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!("{name} weights must be a probability vector")));
            }
        }
        for i in 0..n {
            let row = &self.reference[i * k..(i + 1) * k];
            let total: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v > 0.0)) || (total - self.source[i]).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "reference row {i} must be positive and sum to the source weight"
                )));
            }
        }
        Ok(())
    }

    /// `⟨c, π⟩ + ε KL(π ‖ π0)`.
    pub fn objective(&self, coupling: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((p, c), r) in coupling.iter().zip(&self.cost).zip(&self.reference) {
            if *p > 0.0 {
                total += p * c + self.epsilon * p * (p / r).ln();
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub value: f64,
    pub coupling: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
}

pub const SINKHORN_TOLERANCE: f64 = 1e-10;
pub const SINKHORN_MAX_ITERATIONS: usize = 100_000;

fn log_sum(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let mut s = 0.0;
    for t in terms {
        s += (t - top).exp();
    }
    top + s.ln()
}

/// Log-domain Sinkhorn scaling with Gibbs kernel `π0 e^{−c/ε}`.
pub fn entropic_ot(problem: &DiscreteTransportProblem) -> Result<TransportPlan> {
    problem.validate()?;
    let (n, k) = (problem.n_source(), problem.n_target());
    let eps = problem.epsilon;
    let log_kernel: Vec<f64> = problem
        .cost
        .iter()
        .zip(&problem.reference)
        .map(|(c, r)| r.ln() - c / eps)
        .collect();
    let log_a: Vec<f64> = problem.source.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = problem.target.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];
    let coupling_of = |f: &[f64], g: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                p[i * k + j] = (f[i] + g[j] + log_kernel[i * k + j]).exp();
            }
        }
        p
    };
    let mut error = f64::INFINITY;
    for it in 1..=SINKHORN_MAX_ITERATIONS {
        for i in 0..n {
            let row = &log_kernel[i * k..(i + 1) * k];
            f[i] = if log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_a[i] - log_sum(row.iter().zip(&g).map(|(l, gj)| l + gj))
            };
        }
        for j in 0..k {
            g[j] = if log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_b[j] - log_sum((0..n).map(|i| log_kernel[i * k + j] + f[i]))
            };
        }
        // columns are exact after the g-update; measure the row defect
        let p = coupling_of(&f, &g);
        error = (0..n)
            .map(|i| (p[i * k..(i + 1) * k].iter().sum::<f64>() - problem.source[i]).abs())
            .sum();
        if error < SINKHORN_TOLERANCE {
            return Ok(TransportPlan {
                value: problem.objective(&p),
                coupling: p,
                iterations: it,
                marginal_error: error,
            });
        }
    }
    Err(Error::Numerical(format!(
        "Sinkhorn did not converge: marginal error {error:e} after {SINKHORN_MAX_ITERATIONS} iterations"
    )))
}

/// Best feasible target found by exhaustive search.
#[derive(Debug, Clone)]
pub struct PrimalSupremum {
    /// `−∞` when no candidate is feasible.
    pub value: f64,
    pub weights: Option<Vec<f64>>,
    /// Smallest `W_ε` over all candidates visited.
    pub min_cost: f64,
}

pub const PRIMAL_MAX_ATOMS: usize = 6;

fn compositions(total: usize, parts: usize, out: &mut Vec<Vec<usize>>, prefix: &mut Vec<usize>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for v in 0..=total {
        prefix.push(v);
        compositions(total - v, parts - 1, out, prefix);
        prefix.pop();
    }
}

/// `sup { Σ_j f_j Q_j : W_ε(P, Q) ≤ m }` over target weights on a simplex
/// grid of the given resolution, followed by a pattern search along the
/// constraint boundary down to steps `10^-zoom_levels` of the grid spacing.
pub fn primal_supremum(
    f: &[f64],
    skeleton: &DiscreteTransportProblem,
    m: f64,
    resolution: usize,
    zoom_levels: usize,
) -> Result<PrimalSupremum> {
    let k = skeleton.n_target();
    if f.len() != k {
        return Err(Error::domain("objective length does not match the target atoms"));
    }
    if k > PRIMAL_MAX_ATOMS {
        return Err(Error::domain(format!(
            "exhaustive search limited to {PRIMAL_MAX_ATOMS} atoms, got {k}"
        )));
    }
    if resolution == 0 {
        return Err(Error::domain("resolution must be positive"));
    }
    let cost_of = |w: &[f64]| -> Result<f64> { Ok(entropic_ot(&skeleton.with_target(w.to_vec()))?.value) };
    let dot = |w: &[f64]| -> f64 { w.iter().zip(f).map(|(a, b)| a * b).sum() };

    let mut grid = Vec::new();
    compositions(resolution, k, &mut grid, &mut Vec::new());
    let mut candidates: Vec<(f64, Vec<f64>)> = grid
        .into_iter()
        .map(|c| {
            let w: Vec<f64> = c.iter().map(|&v| v as f64 / resolution as f64).collect();
            (dot(&w), w)
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (val, w) in &candidates {
        if cost_of(w)? <= m {
            best = Some((*val, w.clone()));
            break;
        }
    }
    let Some(mut incumbent) = best else {
        let mut min_cost = f64::INFINITY;
        for (_, w) in &candidates {
            min_cost = min_cost.min(cost_of(w)?);
        }
        return Ok(PrimalSupremum {
            value: f64::NEG_INFINITY,
            weights: None,
            min_cost,
        });
    };
    let mut min_cost = cost_of(&incumbent.1)?;

    if zoom_levels > 0 {
        let centre = cheapest_target(skeleton);
        let centre_cost = cost_of(&centre)?;
        min_cost = min_cost.min(centre_cost);
        if centre_cost < m {
            // pull a target back onto the constraint boundary along the ray from the centre
            let boundary = |q: &[f64]| -> Result<(f64, Vec<f64>)> {
                let at = |t: f64| -> Vec<f64> { centre.iter().zip(q).map(|(c, v)| c + t * (v - c)).collect() };
                let full = at(1.0);
                let c = cost_of(&full)?;
                if c <= m {
                    return Ok((c, full));
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if cost_of(&at(mid))? <= m {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let w = at(lo);
                Ok((cost_of(&w)?, w))
            };
            let mut step = 1.0 / resolution as f64;
            let finest = step / 10f64.powi(zoom_levels as i32);
            while step >= finest {
                loop {
                    let mut moved = false;
                    for a in 0..k {
                        for b in 0..k {
                            if a == b || incumbent.1[b] < step {
                                continue;
                            }
                            let mut q = incumbent.1.clone();
                            q[a] += step;
                            q[b] -= step;
                            let (c, w) = boundary(&q)?;
                            let val = dot(&w);
                            if val > incumbent.0 {
                                min_cost = min_cost.min(c);
                                incumbent = (val, w);
                                moved = true;
                            }
                        }
                    }
                    if !moved {
                        break;
                    }
                }
                step /= 2.0;
            }
        }
    }
    Ok(PrimalSupremum {
        value: incumbent.0,
        weights: Some(incumbent.1),
        min_cost,
    })
}

/// Target weights of the unconstrained minimiser of the transport cost.
fn cheapest_target(p: &DiscreteTransportProblem) -> Vec<f64> {
    let k = p.n_target();
    let mut q = vec![0.0; k];
    for (i, a) in p.source.iter().enumerate() {
        let row: Vec<f64> = (0..k)
            .map(|j| p.reference[i * k + j].ln() - p.cost[i * k + j] / p.epsilon)
            .collect();
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - top).exp()).sum();
        for (j, v) in row.iter().enumerate() {
            q[j] += a * (v - top).exp() / total;
        }
    }
    q
}

/// Central differences `(F(x + t e_k) − F(x − t e_k)) / 2t`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut objective: F, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|k| {
            x[k] = point[k] + step;
            let plus = objective(&x);
            x[k] = point[k] - step;
            let minus = objective(&x);
            x[k] = point[k];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Central difference of `t ↦ F(x + t d)` at `t = 0`.
pub fn fd_directional<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    point: &[f64],
    direction: &[f64],
    step: f64,
) -> f64 {
    let shifted = |s: f64| -> Vec<f64> { point.iter().zip(direction).map(|(x, d)| x + s * d).collect() };
    (objective(&shifted(step)) - objective(&shifted(-step))) / (2.0 * step)
}

/// Full `n_dofs × n_dofs` stiffness with no boundary conditions applied.
pub fn dense_stiffness(mesh: &Mesh2D, hooke: &IsotropicHooke, scale: &[f64]) -> Vec<Vec<f64>> {
    let n = mesh.n_dofs();
    let ke = element_stiffness(mesh.hx(), mesh.hy(), hooke);
    let mut k = vec![vec![0.0; n]; n];
    for e in 0..mesh.n_elements() {
        let dofs = mesh.element_dofs(e);
        for a in 0..8 {
            for b in 0..8 {
                k[dofs[a]][dofs[b]] += scale[e] * ke[a][b];
            }
        }
    }
    k
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .expect("non-empty");
        if a[pivot][col] == 0.0 {
            return Err(Error::Numerical(format!("singular matrix at column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Full displacement for load `ζ` from a dense solve on the free dofs.
pub fn dense_displacement(
    mesh: &Mesh2D,
    hooke: &IsotropicHooke,
    scale: &[f64],
    load: [f64; 2],
) -> Result<Vec<f64>> {
    let k = dense_stiffness(mesh, hooke, scale);
    let f = mesh.traction_vector(load);
    let constrained = mesh.constrained_dofs();
    let free: Vec<usize> = (0..mesh.n_dofs()).filter(|&d| !constrained[d]).collect();
    let a: Vec<Vec<f64>> = free.iter().map(|&r| free.iter().map(|&c| k[r][c]).collect()).collect();
    let rhs: Vec<f64> = free.iter().map(|&r| f[r]).collect();
    let x = dense_solve(a, rhs)?;
    let mut u = vec![0.0; mesh.n_dofs()];
    for (&d, v) in free.iter().zip(x) {
        u[d] = v;
    }
    Ok(u)
}

/// Compliance `f(ζ) · u(ζ)` from a dense solve.
pub fn direct_compliance(
    mesh: &Mesh2D,
    hooke: &IsotropicHooke,
    scale: &[f64],
    load: [f64; 2],
) -> Result<f64> {
    let u = dense_displacement(mesh, hooke, scale, load)?;
    let f = mesh.traction_vector(load);
    Ok(f.iter().zip(&u).map(|(a, b)| a * b).sum())
}
