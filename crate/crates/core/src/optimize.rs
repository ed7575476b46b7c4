//! Projected-gradient design loop under `0 ≤ h ≤ 1`, `Vol(h) = V_T`.
//!
//! Each iteration minimizes the dual objective exactly in `λ` for the current
//! design, then takes one projected gradient step in the density with Armijo
//! backtracking on the reduced objective `J(h) = min_λ D(h, λ)`.

use std::time::Instant;

use crate::dro::{density_gradient, DroMode, DualProblem};
use crate::elasticity::{ComplianceForm, ElasticModel};
use crate::error::{Error, Result};
use crate::material::{simp_scale_values, DensityField, DensityFilter, SimpParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Target volume as a fraction of the hold-all domain.
    pub volume_fraction: f64,
    pub max_iterations: usize,
    /// First trial step; `None` uses `0.1·|D| / ‖g‖₁`.
    pub initial_step: Option<f64>,
    pub armijo: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    pub step_growth: f64,
    /// Largest element-wise design change still counted as stagnation.
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            volume_fraction: 0.2,
            max_iterations: 240,
            initial_step: None,
            armijo: 1e-4,
            backtrack_ratio: 0.5,
            max_backtracks: 20,
            step_growth: 1.2,
            stagnation_tol: 1e-3,
            stagnation_window: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::config(format!(
                "optimizer.volume_fraction must lie in (0,1), got {}",
                self.volume_fraction
            )));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("optimizer.initial_step must be > 0, got {s}")));
            }
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::config("optimizer.armijo must lie in (0,1)"));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::config("optimizer.backtrack_ratio must lie in (0,1)"));
        }
        if !(self.step_growth >= 1.0) {
            return Err(Error::config("optimizer.step_growth must be >= 1"));
        }
        if !(self.stagnation_tol >= 0.0) {
            return Err(Error::config("optimizer.stagnation_tol must be >= 0"));
        }
        Ok(())
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub objective: f64,
    pub lambda: f64,
    pub nominal_compliance: f64,
    /// Volume fraction `Vol(h) / |D|`.
    pub volume: f64,
    pub p: f64,
    pub step: f64,
    pub wall_time_s: f64,
}

/// Objective value and `L²` gradient at a design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub lambda: f64,
    pub nominal_compliance: f64,
}

/// Anything the design loop can minimize.
pub trait DesignObjective {
    fn evaluate(&mut self, design: &DensityField, p: f64) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Stagnation,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub design: DensityField,
    pub lambda: f64,
    pub history: Vec<HistoryRecord>,
    pub stop: StopReason,
}

/// Euclidean projection onto `{0 ≤ h ≤ 1, mean(h) = volume_fraction}`:
/// `clip(h_raw − μ)` with the shift `μ` found by bisection.
pub fn project_volume_box(raw: &[f64], volume_fraction: f64) -> Result<Vec<f64>> {
    if !(volume_fraction > 0.0 && volume_fraction < 1.0) {
        return Err(Error::config(format!(
            "volume target must lie strictly between 0 and the domain measure, got fraction {volume_fraction}"
        )));
    }
    if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("projection input must be a non-empty finite field"));
    }
    let n = raw.len() as f64;
    let target = volume_fraction * n;
    let mass = |mu: f64| raw.iter().map(|r| (r - mu).clamp(0.0, 1.0)).sum::<f64>();
    if raw.iter().all(|v| (0.0..=1.0).contains(v)) && (raw.iter().sum::<f64>() - target).abs() <= 1e-12 * n {
        return Ok(raw.to_vec());
    }
    let mut lo = raw.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    // exact shift on the free set identified by bisection
    let (mut free_sum, mut free, mut ones) = (0.0, 0usize, 0usize);
    for &r in raw {
        let v = r - mu;
        if v >= 1.0 {
            ones += 1;
        } else if v > 0.0 {
            free += 1;
            free_sum += r;
        }
    }
    if free > 0 {
        let exact = (free_sum + ones as f64 - target) / free as f64;
        if (mass(exact) - target).abs() <= (mass(mu) - target).abs() {
            mu = exact;
        }
    }
    Ok(raw.iter().map(|r| (r - mu).clamp(0.0, 1.0)).collect())
}

fn at_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::Solver { .. } | Error::Numerical(_) => {
            Error::Numerical(format!("iteration {iteration}: {err}"))
        }
        other => other,
    }
}

fn checked(eval: Evaluation, iteration: usize, design: &DensityField) -> Result<Evaluation> {
    if eval.objective.is_finite() && eval.gradient.iter().all(|g| g.is_finite()) {
        return Ok(eval);
    }
    let vals = design.values();
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Err(Error::Numerical(format!(
        "iteration {iteration}: non-finite objective {} (lambda {}, nominal {}, volume fraction {}, density range [{lo}, {hi}])",
        eval.objective,
        eval.lambda,
        eval.nominal_compliance,
        design.volume_fraction()
    )))
}

/// Runs the projected-gradient loop from the uniform design `h ≡ V_T`.
pub fn optimize<O: DesignObjective>(
    objective: &mut O,
    simp: &SimpParams,
    config: &OptimizerConfig,
    nx: usize,
    ny: usize,
    cell_area: f64,
) -> Result<OptimizationResult> {
    config.validate()?;
    simp.validate()?;
    let start = Instant::now();
    let vt = config.volume_fraction;
    let domain = (nx * ny) as f64 * cell_area;
    let mut h = DensityField::from_grid(nx, ny, cell_area, vec![vt; nx * ny])?;
    let mut p = simp.p_at(0);
    let mut eval = objective.evaluate(&h, p).map_err(|e| at_iteration(e, 0))?;
    eval = checked(eval, 0, &h)?;
    let mut step = config.initial_step;
    let mut history = Vec::new();
    let mut quiet = 0usize;
    let mut k = 0usize;
    let final_p = simp.final_p();
    let stop = loop {
        let pk = simp.p_at(k);
        if pk != p {
            p = pk;
            eval = objective.evaluate(&h, p).map_err(|e| at_iteration(e, k))?;
            eval = checked(eval, k, &h)?;
            quiet = 0;
        }
        history.push(HistoryRecord {
            iteration: k,
            objective: eval.objective,
            lambda: eval.lambda,
            nominal_compliance: eval.nominal_compliance,
            volume: h.volume_fraction(),
            p,
            step: step.unwrap_or(0.0),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if quiet >= config.stagnation_window {
            break StopReason::Stagnation;
        }
        if k == config.max_iterations {
            break StopReason::MaxIterations;
        }

        let g = &eval.gradient;
        let g_l1 = g.iter().map(|v| v.abs()).sum::<f64>() * cell_area;
        let mut change = 0.0;
        if g_l1 > 0.0 {
            let mut alpha = step.unwrap_or(0.1 * domain / g_l1);
            let mut accepted = None;
            for attempt in 0..=config.max_backtracks {
                let raw: Vec<f64> = h.values().iter().zip(g).map(|(v, d)| v - alpha * d).collect();
                let trial = DensityField::from_grid(nx, ny, cell_area, project_volume_box(&raw, vt)?)?;
                let delta: Vec<f64> = trial.values().iter().zip(h.values()).map(|(a, b)| a - b).collect();
                let max_change = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                if max_change == 0.0 {
                    break;
                }
                let te = objective.evaluate(&trial, p).map_err(|e| at_iteration(e, k))?;
                let decrease = h.inner(g) - trial.inner(g);
                if te.objective.is_finite()
                    && te.objective <= eval.objective - config.armijo * decrease
                {
                    let te = checked(te, k, &trial)?;
                    if attempt == 0 {
                        alpha *= config.step_growth;
                    }
                    accepted = Some((trial, te, max_change));
                    break;
                }
                alpha *= config.backtrack_ratio;
            }
            step = Some(alpha);
            if let Some((trial, te, max_change)) = accepted {
                h = trial;
                eval = te;
                change = max_change;
            }
        }
        if change < config.stagnation_tol && p == final_p {
            quiet += 1;
        } else {
            quiet = 0;
        }
        k += 1;
    };
    Ok(OptimizationResult {
        design: h,
        lambda: eval.lambda,
        history,
        stop,
    })
}

/// Everything computed for one design at one penalization exponent.
#[derive(Debug, Clone)]
pub struct DesignAnalysis {
    pub physical: Vec<f64>,
    pub form: ComplianceForm,
    pub costs: Vec<f64>,
    pub objective: f64,
    pub lambda: f64,
    pub nominal_compliance: f64,
    pub worst_case: f64,
    pub possibly_infeasible: bool,
    pub gradient: Vec<f64>,
}

/// Filter → SIMP → elasticity → dual, as used by the design loop.
pub struct DroObjective<'a> {
    model: ElasticModel,
    simp: SimpParams,
    filter: DensityFilter,
    problem: DualProblem<'a>,
    infeasible_evaluations: usize,
}

impl<'a> DroObjective<'a> {
    pub fn new(model: ElasticModel, simp: SimpParams, problem: DualProblem<'a>) -> Result<Self> {
        simp.validate()?;
        let filter = DensityFilter::for_mesh(model.mesh(), simp.filter_radius)?;
        Ok(DroObjective {
            model,
            simp,
            filter,
            problem,
            infeasible_evaluations: 0,
        })
    }

    pub fn model(&self) -> &ElasticModel {
        &self.model
    }

    pub fn problem(&self) -> &DualProblem<'a> {
        &self.problem
    }

    pub fn filter(&self) -> &DensityFilter {
        &self.filter
    }

    /// Number of evaluations whose multiplier search hit the upper bracket edge.
    pub fn infeasible_evaluations(&self) -> usize {
        self.infeasible_evaluations
    }

    /// Filtered density actually seen by the elasticity model.
    pub fn physical_density(&self, design: &DensityField) -> Vec<f64> {
        self.filter
            .apply(design.values())
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect()
    }

    /// Whether the configured mode and radius reduce to the nominal problem.
    fn is_nominal(&self) -> bool {
        self.problem.params.mode == DroMode::Nominal
            || (self.problem.params.mode == DroMode::Entropic && self.problem.params.m == 0.0)
    }

    pub fn analyze(&mut self, design: &DensityField, p: f64) -> Result<DesignAnalysis> {
        let physical = self.physical_density(design);
        let simp = self.simp.with_p(p);
        let form = self.model.compliance_form(&simp_scale_values(&physical, &simp))?;
        let costs = self.problem.node_costs(&form);
        let nominal_compliance = self.problem.nominal_cost(&costs);
        let worst_case = self.problem.worst_case_limit(&costs);
        let mut possibly_infeasible = false;
        let (objective, lambda, moments) = if self.is_nominal() {
            let moments = self
                .problem
                .nominal
                .samples()
                .iter()
                .map(|z| [[z[0] * z[0], z[0] * z[1]], [z[1] * z[0], z[1] * z[1]]])
                .collect::<Vec<_>>();
            (nominal_compliance, 0.0, moments)
        } else if self.problem.params.mode == DroMode::Hard {
            let hard = self.problem.hard_dual(&costs, self.problem.params.m)?;
            let moments = hard.moments(self.problem.grid);
            (hard.value, hard.lambda, moments)
        } else {
            let min = self.problem.minimize_lambda(&costs)?;
            possibly_infeasible = min.possibly_infeasible;
            (min.value, min.lambda, min.evaluation.moments)
        };
        if possibly_infeasible {
            self.infeasible_evaluations += 1;
        }
        let gradient = density_gradient(&moments, &form, &simp, &physical, Some(&self.filter))?;
        Ok(DesignAnalysis {
            physical,
            form,
            costs,
            objective,
            lambda,
            nominal_compliance,
            worst_case,
            possibly_infeasible,
            gradient,
        })
    }
}

impl DesignObjective for DroObjective<'_> {
    fn evaluate(&mut self, design: &DensityField, p: f64) -> Result<Evaluation> {
        let a = self.analyze(design, p)?;
        Ok(Evaluation {
            objective: a.objective,
            gradient: a.gradient,
            lambda: a.lambda,
            nominal_compliance: a.nominal_compliance,
        })
    }
}
