//! Configured runs: one optimization per tolerance `m`, plus artifacts.

mod config;
mod output;

use std::path::Path;

pub use config::{
    DroConfig, Emit, Geometry, MValues, MaterialConfig, MeshConfig, OptimizerSection, OutputConfig,
    RunConfig, UncertaintyConfig, SCHEMA_VERSION,
};
pub use output::{
    emit_history, emit_pgm, emit_raw, emit_vtk, format_float, gray_level, read_raw, write_history,
    write_pgm, write_raw, write_vtk, HISTORY_HEADER,
};

use crate::dro::{DroMode, DualProblem};
use crate::elasticity::{ElasticModel, Mesh2D};
use crate::error::{Error, Result};
use crate::material::DensityField;
use crate::optimize::{optimize, DroObjective, HistoryRecord, StopReason};
use crate::uncertainty::{
    build_load_grid, reference_marginals, LoadSpaceDiscretization, NominalLaw, ReferenceMarginals,
};

/// Outcome of the optimization for one tolerance.
#[derive(Debug, Clone)]
pub struct MRun {
    pub m: f64,
    pub mode: DroMode,
    /// Unfiltered design variable.
    pub design: DensityField,
    /// Filtered density seen by the elasticity model.
    pub physical: DensityField,
    pub lambda: f64,
    pub objective: f64,
    pub nominal_compliance: f64,
    pub worst_case: f64,
    pub history: Vec<HistoryRecord>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
}

/// Load grid, nominal law and reference marginals shared by every `m`.
pub struct Setup {
    pub config: RunConfig,
    pub mesh: Mesh2D,
    pub grid: LoadSpaceDiscretization,
    pub nominal: NominalLaw,
    pub marginals: ReferenceMarginals,
}

impl Setup {
    pub fn new(config: RunConfig) -> Result<Self> {
        let mesh = config.mesh()?;
        let grid = build_load_grid(&config.grid_spec())?;
        let nominal = NominalLaw::snap(&grid, &config.samples())?;
        let marginals = reference_marginals(&grid, &nominal, config.uncertainty.sigma)?;
        Ok(Setup {
            config,
            mesh,
            grid,
            nominal,
            marginals,
        })
    }

    /// Optimizes the design for tolerance `m`.
    pub fn run_m(&self, m: f64) -> Result<MRun> {
        let c = &self.config;
        let params = c.dro_params(m);
        let mut warnings = Vec::new();
        let sigma = c.uncertainty.sigma;
        if params.mode == DroMode::Entropic && m > 0.0 && m < 10.0 * sigma {
            warnings.push(format!(
                "m = {m} is below 10 sigma = {}; the entropic ball may be empty",
                10.0 * sigma
            ));
        }
        let problem = DualProblem::new(&self.grid, &self.nominal, &self.marginals, params)?;
        let model = ElasticModel::new(&self.mesh, &c.hooke()?);
        let simp = c.simp();
        let mut objective = DroObjective::new(model, simp.clone(), problem)?;
        let opt = c.optimizer_config();
        let mut result = optimize(
            &mut objective,
            &simp,
            &opt,
            self.mesh.nx(),
            self.mesh.ny(),
            self.mesh.element_area(),
        )
        .map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("m = {m}: {msg}")),
            other => other,
        })?;
        if !c.output.record_wall_time {
            for r in &mut result.history {
                r.wall_time_s = 0.0;
            }
        }
        let final_p = result.history.last().map_or(simp.final_p(), |r| r.p);
        let analysis = objective.analyze(&result.design, final_p)?;
        if objective.infeasible_evaluations() > 0 {
            warnings.push(format!(
                "{} evaluations had their multiplier at the upper bracket end; m may be below the feasibility threshold",
                objective.infeasible_evaluations()
            ));
        }
        let physical = DensityField::new(&self.mesh, analysis.physical)?;
        Ok(MRun {
            m,
            mode: params.mode,
            design: result.design,
            physical,
            lambda: analysis.lambda,
            objective: analysis.objective,
            nominal_compliance: analysis.nominal_compliance,
            worst_case: analysis.worst_case,
            history: result.history,
            stop: result.stop,
            warnings,
        })
    }
}

pub const SUMMARY_HEADER: &str = "m,mode,objective,lambda,nominal_compliance,worst_case,volume,iterations,stop";

fn file_tag(m: f64) -> String {
    format!("m{m}")
}

/// Writes the per-`m` artifacts selected by `emit`.
pub fn write_run(run: &MRun, mesh: &Mesh2D, emit: &[Emit], dir: &Path) -> Result<()> {
    let tag = file_tag(run.m);
    for e in emit {
        match e {
            Emit::Pgm => emit_pgm(&run.physical, &dir.join(format!("density_{tag}.pgm")))?,
            Emit::Raw => emit_raw(&run.physical, &dir.join(format!("density_{tag}.raw")))?,
            Emit::Vtk => emit_vtk(&run.physical, mesh.hx(), mesh.hy(), &dir.join(format!("density_{tag}.vtk")))?,
            Emit::Csv => emit_history(&run.history, &dir.join(format!("history_{tag}.csv")))?,
        }
    }
    Ok(())
}

pub fn summary_row(run: &MRun) -> String {
    let mode = match run.mode {
        DroMode::Entropic if run.m == 0.0 => "nominal",
        DroMode::Entropic => "entropic",
        DroMode::Hard => "hard",
        DroMode::Nominal => "nominal",
    };
    let stop = match run.stop {
        StopReason::MaxIterations => "max_iterations",
        StopReason::Stagnation => "stagnation",
    };
    format!(
        "{},{mode},{},{},{},{},{},{},{stop}",
        run.m,
        format_float(run.objective),
        format_float(run.lambda),
        format_float(run.nominal_compliance),
        format_float(run.worst_case),
        format_float(run.physical.volume_fraction()),
        run.history.len().saturating_sub(1),
    )
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Runs every `m` of the configuration, writing artifacts into `dir` as each
/// run finishes. `report` sees each result before the next run starts.
pub fn run_sweep(
    config: &RunConfig,
    dir: &Path,
    mut report: impl FnMut(&MRun),
) -> Result<Vec<MRun>> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let effective = dir.join("effective_config.json");
    std::fs::write(&effective, config.to_json()).map_err(|e| io_error(&effective, e))?;
    let setup = Setup::new(config.clone())?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let summary_path = dir.join("summary.csv");
    let mut runs = Vec::new();
    for m in config.m_values() {
        let run = setup.run_m(m)?;
        write_run(&run, &setup.mesh, &config.output.emit, dir)?;
        summary.push_str(&summary_row(&run));
        summary.push('\n');
        std::fs::write(&summary_path, &summary).map_err(|e| io_error(&summary_path, e))?;
        report(&run);
        runs.push(run);
    }
    Ok(runs)
}
