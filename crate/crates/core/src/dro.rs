//! Entropic dual objective of the distributionally robust compliance.
//!
//! For a design with node costs `C_j = ζ_jᵀ M ζ_j` the worst-case expected
//! cost over the entropic Wasserstein ball of radius `m` equals
//!
//! ```text
//! inf_{λ>0}  D(λ) = λm + λε (1/N) Σ_i log Σ_j ν_ij exp((C_j − λ c_ij) / (λε))
//! ```
//!
//! Everything here works on the cost vector `C`, so tests can inject
//! arbitrary costs; [`DualProblem::node_costs`] builds it from a
//! [`ComplianceForm`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elasticity::ComplianceForm;
use crate::error::{Error, Result};
use crate::material::{simp_scale_derivative_values, DensityFilter, SimpParams};
use crate::uncertainty::{LoadSpaceDiscretization, NominalLaw, ReferenceMarginals};

/// Width of the fixed reduction blocks over grid nodes. Partial results are
/// combined in block order, so sums do not depend on the thread count.
const CHUNK: usize = 2048;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Relative width of the final `log λ` interval of the golden-section search.
pub const LAMBDA_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DroMode {
    /// Entropic dual (smooth log-sum-exp).
    Entropic,
    /// Unregularized Wasserstein dual (hard maximum over nodes).
    Hard,
    /// Expected cost under the nominal law only.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroParams {
    pub m: f64,
    pub epsilon: f64,
    pub lambda_bracket: (f64, f64),
    pub mode: DroMode,
}

impl DroParams {
    pub fn entropic(m: f64, epsilon: f64) -> Self {
        DroParams {
            m,
            epsilon,
            lambda_bracket: (1e-6, 1e4),
            mode: DroMode::Entropic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::config(format!("dro.m must be >= 0, got {}", self.m)));
        }
        if self.mode == DroMode::Entropic && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("dro.epsilon must be > 0, got {}", self.epsilon)));
        }
        let (lo, hi) = self.lambda_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config(format!(
                "dro.lambda_bracket must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// `log Σ_j w_j e^{v_j}` for a probability vector `w`, evaluated with a max shift.
pub fn logsumexp(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::domain("logsumexp: values and weights differ in length"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::domain(format!("logsumexp: negative weight {w}")));
    }
    let exps: Vec<f64> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| v + w.ln())
        .collect();
    if exps.is_empty() {
        return Err(Error::domain("logsumexp: all weights are zero"));
    }
    let (max, sum) = shifted_sum(&exps);
    if max == f64::NEG_INFINITY {
        return Err(Error::domain("logsumexp: no finite value carries positive weight"));
    }
    Ok(max + sum.ln())
}

/// `(max, Σ e^{a − max})` of a slice.
fn shifted_sum(a: &[f64]) -> (f64, f64) {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (max, 0.0);
    }
    (max, a.iter().map(|v| (v - max).exp()).sum())
}

/// Block-wise `log Σ_j e^{a(j)}` with a deterministic combination order.
fn chunked_logsumexp<F>(k: usize, exponent: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<(f64, f64)> = (0..k.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(k);
            let block: Vec<f64> = range.map(&exponent).collect();
            shifted_sum(&block)
        })
        .collect();
    let max = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = parts.iter().map(|(m, s)| s * (m - max).exp()).sum();
    max + sum.ln()
}

/// Dual objective at one multiplier with its softmax reweighting.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub lambda: f64,
    pub value: f64,
    /// `L_i = log Σ_j ν_ij exp((C_j − λ c_ij)/(λε))`.
    pub log_terms: Vec<f64>,
    /// Softmax weights `w_ij`, row-major `N × K`.
    pub weights: Vec<f64>,
    /// `S_i = Σ_j w_ij ζ_j ζ_jᵀ`.
    pub moments: Vec<[[f64; 2]; 2]>,
    /// `Ē_i = Σ_j w_ij C_j`.
    pub mean_costs: Vec<f64>,
}

impl DualEvaluation {
    pub fn weight_row(&self, i: usize) -> &[f64] {
        let k = self.weights.len() / self.log_terms.len();
        &self.weights[i * k..(i + 1) * k]
    }
}

/// Result of the inner minimization over `λ`.
#[derive(Debug, Clone)]
pub struct LambdaMinimum {
    pub lambda: f64,
    pub value: f64,
    /// The objective still decreases at the upper bracket edge: the ball of
    /// radius `m` is (numerically) empty and the dual is unbounded below.
    pub possibly_infeasible: bool,
    pub evaluation: DualEvaluation,
}

/// Minimizer of the unregularized dual.
#[derive(Debug, Clone)]
pub struct HardDual {
    pub lambda: f64,
    pub value: f64,
    /// Maximizing node per sample at `lambda`.
    pub argmax: Vec<usize>,
}

impl HardDual {
    pub fn moments(&self, grid: &LoadSpaceDiscretization) -> Vec<[[f64; 2]; 2]> {
        self.argmax.iter().map(|&j| outer(grid.nodes()[j])).collect()
    }
}

fn outer(z: [f64; 2]) -> [[f64; 2]; 2] {
    [[z[0] * z[0], z[0] * z[1]], [z[1] * z[0], z[1] * z[1]]]
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Ground set, nominal law, reference marginals and dual parameters.
#[derive(Debug, Clone, Copy)]
pub struct DualProblem<'a> {
    pub grid: &'a LoadSpaceDiscretization,
    pub nominal: &'a NominalLaw,
    pub marginals: &'a ReferenceMarginals,
    pub params: DroParams,
}

impl<'a> DualProblem<'a> {
    pub fn new(
        grid: &'a LoadSpaceDiscretization,
        nominal: &'a NominalLaw,
        marginals: &'a ReferenceMarginals,
        params: DroParams,
    ) -> Result<Self> {
        params.validate()?;
        if marginals.n_nodes() != grid.len() || marginals.n_samples() != nominal.len() {
            return Err(Error::domain(
                "reference marginals do not match the load grid and nominal law",
            ));
        }
        Ok(DualProblem {
            grid,
            nominal,
            marginals,
            params,
        })
    }

    /// `C_j = ζ_jᵀ M ζ_j` for every grid node.
    pub fn node_costs(&self, form: &ComplianceForm) -> Vec<f64> {
        self.grid.nodes().iter().map(|&z| form.compliance(z)).collect()
    }

    /// `(1/N) Σ_i C(ξ_i)`.
    pub fn nominal_cost(&self, costs: &[f64]) -> f64 {
        self.nominal.node_index().iter().map(|&j| costs[j]).sum::<f64>() * self.nominal.weight()
    }

    /// `max_j C_j`: the `λ → 0⁺` limit of the entropic dual.
    pub fn worst_case_limit(&self, costs: &[f64]) -> f64 {
        costs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn check(&self, costs: &[f64], lambda: f64) -> Result<()> {
        if costs.len() != self.grid.len() {
            return Err(Error::domain(format!(
                "{} node costs for {} grid nodes",
                costs.len(),
                self.grid.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        if self.params.mode != DroMode::Entropic {
            return Err(Error::domain("entropic dual evaluated outside entropic mode"));
        }
        Ok(())
    }

    fn log_term(&self, costs: &[f64], lambda: f64, i: usize) -> f64 {
        let scale = 1.0 / (lambda * self.params.epsilon);
        let c = self.marginals.cost_row(i);
        let lw = self.marginals.log_weight_row(i);
        chunked_logsumexp(costs.len(), |j| (costs[j] - lambda * c[j]) * scale + lw[j])
    }

    /// `D(λ)` without the softmax weights.
    pub fn value(&self, costs: &[f64], lambda: f64) -> Result<f64> {
        self.check(costs, lambda)?;
        let n = self.nominal.len();
        let mean: f64 = (0..n).map(|i| self.log_term(costs, lambda, i)).sum::<f64>() / n as f64;
        Ok(lambda * self.params.m + lambda * self.params.epsilon * mean)
    }

    /// `D(λ)` with log terms, softmax weights, moments and mean costs.
    pub fn evaluate(&self, costs: &[f64], lambda: f64) -> Result<DualEvaluation> {
        self.check(costs, lambda)?;
        let (n, k) = (self.nominal.len(), self.grid.len());
        let nodes = self.grid.nodes();
        let scale = 1.0 / (lambda * self.params.epsilon);
        let mut log_terms = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n * k);
        let mut moments = Vec::with_capacity(n);
        let mut mean_costs = Vec::with_capacity(n);
        for i in 0..n {
            let c = self.marginals.cost_row(i);
            let lw = self.marginals.log_weight_row(i);
            let exponent = |j: usize| (costs[j] - lambda * c[j]) * scale + lw[j];
            let log_total = chunked_logsumexp(k, exponent);
            let row: Vec<f64> = (0..k)
                .into_par_iter()
                .with_min_len(CHUNK)
                .map(|j| (exponent(j) - log_total).exp())
                .collect();
            let parts: Vec<[f64; 4]> = row
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(b, block)| {
                    let mut acc = [0.0; 4];
                    for (off, w) in block.iter().enumerate() {
                        let j = b * CHUNK + off;
                        let z = nodes[j];
                        acc[0] += w * z[0] * z[0];
                        acc[1] += w * z[0] * z[1];
                        acc[2] += w * z[1] * z[1];
                        acc[3] += w * costs[j];
                    }
                    acc
                })
                .collect();
            let mut acc = [0.0; 4];
            for p in &parts {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            log_terms.push(log_total);
            moments.push([[acc[0], acc[1]], [acc[1], acc[2]]]);
            mean_costs.push(acc[3]);
            weights.extend(row);
        }
        let mean_log = log_terms.iter().sum::<f64>() / n as f64;
        Ok(DualEvaluation {
            lambda,
            value: lambda * self.params.m + lambda * self.params.epsilon * mean_log,
            log_terms,
            weights,
            moments,
            mean_costs,
        })
    }

    /// `∂D/∂λ = m + (1/N) Σ_i [ε L_i − Ē_i / λ]`.
    pub fn lambda_derivative(&self, eval: &DualEvaluation) -> f64 {
        let n = eval.log_terms.len() as f64;
        let eps = self.params.epsilon;
        let avg: f64 = eval
            .log_terms
            .iter()
            .zip(&eval.mean_costs)
            .map(|(l, e)| eps * l - e / eval.lambda)
            .sum::<f64>()
            / n;
        self.params.m + avg
    }

    /// Golden-section search on `log λ` over the bracket; `D` is convex in `λ`.
    pub fn minimize_lambda(&self, costs: &[f64]) -> Result<LambdaMinimum> {
        if !(self.params.m > 0.0) {
            return Err(Error::domain(format!(
                "entropic dual needs m > 0 (got {}); use nominal mode for m = 0",
                self.params.m
            )));
        }
        let (lo, hi) = self.params.lambda_bracket;
        let (v_lo, v_hi) = (self.value(costs, lo)?, self.value(costs, hi)?);
        if !v_lo.is_finite() || !v_hi.is_finite() {
            return Err(Error::Numerical(format!(
                "dual objective not finite at the bracket ends: D({lo}) = {v_lo}, D({hi}) = {v_hi}"
            )));
        }
        let mut failure = None;
        let t = golden_section(
            |t| match self.value(costs, t.exp()) {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    failure.get_or_insert(format!("dual objective is {v} at lambda = {}", t.exp()));
                    f64::INFINITY
                }
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                    f64::INFINITY
                }
            },
            lo.ln(),
            hi.ln(),
            LAMBDA_TOLERANCE,
        );
        if let Some(msg) = failure {
            return Err(Error::Numerical(msg));
        }
        let mid = t.exp().clamp(lo, hi);
        let v_mid = self.value(costs, mid)?;
        let (lambda, _) = [(mid, v_mid), (lo, v_lo), (hi, v_hi)]
            .into_iter()
            .fold((mid, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        let at_hi = self.evaluate(costs, hi)?;
        let possibly_infeasible = lambda == hi
            || lambda >= hi * (1.0 - 10.0 * LAMBDA_TOLERANCE)
            || self.lambda_derivative(&at_hi) < -1e-8;
        let evaluation = if lambda == hi { at_hi } else { self.evaluate(costs, lambda)? };
        Ok(LambdaMinimum {
            lambda,
            value: evaluation.value,
            possibly_infeasible,
            evaluation,
        })
    }

    /// `λ m + (1/N) Σ_i max_j (C_j − λ c_ij)` and the maximizing nodes.
    fn hard_objective(&self, costs: &[f64], m: f64, lambda: f64) -> (f64, Vec<usize>) {
        let n = self.nominal.len();
        let mut total = 0.0;
        let mut argmax = Vec::with_capacity(n);
        for i in 0..n {
            let c = self.marginals.cost_row(i);
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (j, (cj, cij)) in costs.iter().zip(c).enumerate() {
                let v = cj - lambda * cij;
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            total += best;
            argmax.push(arg);
        }
        (lambda * m + total / n as f64, argmax)
    }

    /// Dual of the unregularized problem, minimized over `λ ≥ 0`.
    pub fn hard_dual(&self, costs: &[f64], m: f64) -> Result<HardDual> {
        if costs.len() != self.grid.len() {
            return Err(Error::domain("node costs do not match the grid"));
        }
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::domain(format!("m must be >= 0, got {m}")));
        }
        // beyond `cap` every inner maximum sits at the sample itself
        let mut cap = 0.0f64;
        for (i, &ji) in self.nominal.node_index().iter().enumerate() {
            let c = self.marginals.cost_row(i);
            for (cj, cij) in costs.iter().zip(c) {
                if *cij > 0.0 {
                    cap = cap.max((cj - costs[ji]) / cij);
                }
            }
        }
        let mut candidates = vec![0.0, cap];
        if cap > 0.0 {
            let t = golden_section(|l| self.hard_objective(costs, m, l).0, 0.0, cap, 1e-12 * cap);
            candidates.push(t);
        }
        let (lambda, value, argmax) = candidates
            .into_iter()
            .map(|l| {
                let (v, a) = self.hard_objective(costs, m, l);
                (l, v, a)
            })
            .fold((0.0, f64::INFINITY, Vec::new()), |best, c| if c.1 < best.1 { c } else { best });
        Ok(HardDual {
            lambda,
            value,
            argmax,
        })
    }
}

/// Mean of the per-sample moment matrices.
pub fn mean_moment(moments: &[[[f64; 2]; 2]]) -> [[f64; 2]; 2] {
    let n = moments.len() as f64;
    let mut s = [[0.0; 2]; 2];
    for m in moments {
        for a in 0..2 {
            for b in 0..2 {
                s[a][b] += m[a][b] / n;
            }
        }
    }
    s
}

/// `L²` gradient of the dual objective with respect to the design density.
///
/// `physical` is the (filtered) density the form was computed with;
/// `filter`, when given, is transposed to pull the sensitivity back to the
/// unfiltered design variable.
pub fn density_gradient(
    moments: &[[[f64; 2]; 2]],
    form: &ComplianceForm,
    simp: &SimpParams,
    physical: &[f64],
    filter: Option<&DensityFilter>,
) -> Result<Vec<f64>> {
    if physical.len() != form.n_elements() {
        return Err(Error::domain(format!(
            "density has {} elements, compliance form {}",
            physical.len(),
            form.n_elements()
        )));
    }
    if moments.is_empty() {
        return Err(Error::domain("no moment matrices"));
    }
    let energy = form.gradient_fields(mean_moment(moments))?;
    let dscale = simp_scale_derivative_values(physical, simp);
    let grad: Vec<f64> = energy.iter().zip(&dscale).map(|(g, d)| -d * g).collect();
    Ok(match filter {
        Some(f) => f.apply_transpose(&grad),
        None => grad,
    })
}

/// Entropic dual at a fixed `λ` for the compliance form of a design.
pub fn eval_dual(
    form: &ComplianceForm,
    grid: &LoadSpaceDiscretization,
    nominal: &NominalLaw,
    marginals: &ReferenceMarginals,
    params: DroParams,
    lambda: f64,
) -> Result<DualEvaluation> {
    let problem = DualProblem::new(grid, nominal, marginals, params)?;
    problem.evaluate(&problem.node_costs(form), lambda)
}

pub fn minimize_lambda(
    form: &ComplianceForm,
    grid: &LoadSpaceDiscretization,
    nominal: &NominalLaw,
    marginals: &ReferenceMarginals,
    params: DroParams,
) -> Result<LambdaMinimum> {
    let problem = DualProblem::new(grid, nominal, marginals, params)?;
    problem.minimize_lambda(&problem.node_costs(form))
}

/// `max_j ζ_jᵀ M ζ_j` over the grid nodes.
pub fn worst_case_limit(form: &ComplianceForm, grid: &LoadSpaceDiscretization) -> f64 {
    grid.nodes()
        .iter()
        .map(|&z| form.compliance(z))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::reference_marginals;

    #[test]
    fn logsumexp_constant_values() {
        let w = [0.2, 0.3, 0.5];
        let v = logsumexp(&[1.7; 3], &w).unwrap();
        assert!((v - 1.7).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_shift_invariance() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let w = [0.1, 0.2, 0.3, 0.4];
        let base = logsumexp(&v, &w).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + 1e6).collect();
        let s = logsumexp(&shifted, &w).unwrap();
        assert!((s - (base + 1e6)).abs() <= 1e-9);
    }

    #[test]
    fn logsumexp_does_not_overflow() {
        // log(0.5 e^0 + 0.5 e^1000) = 1000 + log 0.5 + log1p(e^-1000)
        let v = logsumexp(&[0.0, 1000.0], &[0.5, 0.5]).unwrap();
        assert!((v - (1000.0 + 0.5f64.ln())).abs() <= 1e-12);
        let big = logsumexp(&[1e308, 1e308], &[0.5, 0.5]).unwrap();
        assert_eq!(big, 1e308);
    }

    #[test]
    fn logsumexp_rejects_zero_weights() {
        assert!(matches!(logsumexp(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| (x - 0.2).powi(2), -1.0, 1.0, 1e-9);
        assert!((x - 0.2).abs() < 1e-8);
    }

    fn toy() -> (LoadSpaceDiscretization, NominalLaw, ReferenceMarginals) {
        let grid = LoadSpaceDiscretization::from_nodes(
            2.0,
            1.0,
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        )
        .unwrap();
        let law = NominalLaw::snap(&grid, &[[0.0, 0.0]]).unwrap();
        let nu = reference_marginals(&grid, &law, 0.1).unwrap();
        (grid, law, nu)
    }

    #[test]
    fn hard_dual_limits() {
        let (grid, law, nu) = toy();
        let p = DualProblem::new(&grid, &law, &nu, DroParams::entropic(0.5, 0.1)).unwrap();
        let costs = [0.5, 1.0, 4.0];
        let at_zero = p.hard_dual(&costs, 0.0).unwrap();
        assert!((at_zero.value - 0.5).abs() < 1e-12);
        let wide = p.hard_dual(&costs, 16.0).unwrap();
        assert!((wide.value - 4.0).abs() < 1e-12);
        assert_eq!(wide.argmax, vec![2]);
    }

    #[test]
    fn evaluation_rejects_bad_lambda() {
        let (grid, law, nu) = toy();
        let p = DualProblem::new(&grid, &law, &nu, DroParams::entropic(0.5, 0.1)).unwrap();
        assert!(matches!(p.value(&[0.0, 1.0, 4.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(p.value(&[0.0, 1.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn chunked_reduction_matches_plain_sum() {
        let k = 3 * CHUNK + 17;
        let a: Vec<f64> = (0..k).map(|j| (j as f64 * 0.01).sin() * 50.0).collect();
        let chunked = chunked_logsumexp(k, |j| a[j]);
        let (m, s) = shifted_sum(&a);
        assert!((chunked - (m + s.ln())).abs() < 1e-12);
    }
}
