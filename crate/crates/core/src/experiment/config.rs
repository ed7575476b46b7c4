//! JSON run configuration with per-geometry defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dro::{DroMode, DroParams};
use crate::elasticity::{IsotropicHooke, Mesh2D};
use crate::error::{Error, Result};
use crate::material::SimpParams;
use crate::optimize::OptimizerConfig;
use crate::uncertainty::{GridSpec, Load};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    #[default]
    Bridge,
    CantileverDensity,
}

impl Geometry {
    fn default_cells(self) -> (usize, usize) {
        match self {
            Geometry::Bridge => (100, 100),
            Geometry::CantileverDensity => (160, 80),
        }
    }

    fn default_lengths(self) -> (f64, f64) {
        match self {
            Geometry::Bridge => (1.0, 1.0),
            Geometry::CantileverDensity => (2.0, 1.0),
        }
    }

    fn default_sample(self) -> Load {
        match self {
            Geometry::Bridge => [0.0, -1.0],
            Geometry::CantileverDensity => [-1.0, 0.0],
        }
    }

    fn default_volume_fraction(self) -> f64 {
        match self {
            Geometry::Bridge => 0.2,
            Geometry::CantileverDensity => 0.3,
        }
    }

    fn default_m(self) -> Vec<f64> {
        match self {
            Geometry::Bridge => vec![0.0, 0.25, 0.52, 0.6, 0.9, 1.0],
            Geometry::CantileverDensity => vec![0.0, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub geometry: Geometry,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub eta: f64,
    pub p: f64,
    pub p_schedule: Vec<(usize, f64)>,
    pub filter_radius: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        let simp = SimpParams::default();
        let hooke = IsotropicHooke::default();
        MaterialConfig {
            young_modulus: hooke.young_modulus,
            poisson_ratio: hooke.poisson_ratio,
            eta: simp.eta,
            p: simp.p,
            p_schedule: simp.p_schedule,
            filter_radius: simp.filter_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    pub radius: f64,
    pub spacing: f64,
    pub refinement_spacing: f64,
    /// Defaults to `10 √(2σ)`.
    pub refinement_radius: Option<f64>,
    pub sigma: f64,
    pub samples: Option<Vec<Load>>,
    pub max_nodes: usize,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            radius: 3.0,
            spacing: 0.05,
            refinement_spacing: 0.01,
            refinement_radius: None,
            sigma: 1e-3,
            samples: None,
            max_nodes: 500_000,
        }
    }
}

/// A single radius or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MValues {
    One(f64),
    Many(Vec<f64>),
}

impl MValues {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            MValues::One(m) => vec![*m],
            MValues::Many(ms) => ms.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroConfig {
    pub m: Option<MValues>,
    pub epsilon: f64,
    pub mode: DroMode,
    pub lambda_bracket: (f64, f64),
}

impl Default for DroConfig {
    fn default() -> Self {
        let p = DroParams::entropic(0.0, 1e-2);
        DroConfig {
            m: None,
            epsilon: p.epsilon,
            mode: p.mode,
            lambda_bracket: p.lambda_bracket,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub volume_fraction: Option<f64>,
    pub max_iterations: usize,
    pub initial_step: Option<f64>,
    pub armijo: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    pub step_growth: f64,
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        OptimizerSection {
            volume_fraction: None,
            max_iterations: o.max_iterations,
            initial_step: o.initial_step,
            armijo: o.armijo,
            backtrack_ratio: o.backtrack_ratio,
            max_backtracks: o.max_backtracks,
            step_growth: o.step_growth,
            stagnation_tol: o.stagnation_tol,
            stagnation_window: o.stagnation_window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Pgm,
    Raw,
    Csv,
    Vtk,
}

impl std::str::FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pgm" => Ok(Emit::Pgm),
            "raw" => Ok(Emit::Raw),
            "csv" => Ok(Emit::Csv),
            "vtk" => Ok(Emit::Vtk),
            other => Err(Error::config(format!(
                "output.emit: unknown format `{other}` (expected pgm, raw, csv or vtk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub emit: Vec<Emit>,
    /// When false the `wall_time_s` column is written as zero.
    pub record_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("results"),
            emit: vec![Emit::Pgm, Emit::Raw, Emit::Csv],
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub dro: DroConfig,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputConfig,
    /// Reserved; the pipeline is deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            mesh: MeshConfig::default(),
            material: MaterialConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            dro: DroConfig::default(),
            optimizer: OptimizerSection::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{key} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        config.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Fills every geometry-dependent default and validates all sections.
    pub fn resolve(mut self) -> Result<Self> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        let g = self.mesh.geometry;
        let (nx, ny) = g.default_cells();
        let (lx, ly) = g.default_lengths();
        self.mesh.nx.get_or_insert(nx);
        self.mesh.ny.get_or_insert(ny);
        self.mesh.lx.get_or_insert(lx);
        self.mesh.ly.get_or_insert(ly);
        let sigma = self.uncertainty.sigma;
        positive("uncertainty.sigma", sigma)?;
        self.uncertainty
            .refinement_radius
            .get_or_insert(GridSpec::refinement_radius_for_sigma(sigma));
        self.uncertainty.samples.get_or_insert_with(|| vec![g.default_sample()]);
        self.dro.m.get_or_insert_with(|| MValues::Many(g.default_m()));
        self.dro.m = Some(MValues::Many(self.m_values()));
        self.optimizer
            .volume_fraction
            .get_or_insert(g.default_volume_fraction());
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.mesh()?;
        self.hooke()?;
        self.simp().validate()?;
        let u = &self.uncertainty;
        positive("uncertainty.radius", u.radius)?;
        positive("uncertainty.spacing", u.spacing)?;
        positive("uncertainty.refinement_spacing", u.refinement_spacing)?;
        let rr = u.refinement_radius.unwrap_or(0.0);
        if !(rr >= 0.0 && rr.is_finite()) {
            return Err(Error::config(format!(
                "uncertainty.refinement_radius must be >= 0, got {rr}"
            )));
        }
        if u.max_nodes == 0 {
            return Err(Error::config("uncertainty.max_nodes must be positive"));
        }
        let samples = self.samples();
        if samples.is_empty() {
            return Err(Error::config("uncertainty.samples must not be empty"));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(s[0].is_finite() && s[1].is_finite()))
        {
            return Err(Error::config(format!("uncertainty.samples[{i}] is not finite: {s:?}")));
        }
        let ms = self.m_values();
        if ms.is_empty() {
            return Err(Error::config("dro.m must not be empty"));
        }
        if let Some(m) = ms.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(Error::config(format!("dro.m values must be >= 0, got {m}")));
        }
        for m in ms {
            self.dro_params(m).validate()?;
        }
        self.optimizer_config().validate()?;
        if self.output.emit.is_empty() {
            return Err(Error::config("output.emit must name at least one format"));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh2D> {
        let c = &self.mesh;
        let g = c.geometry;
        let (dnx, dny) = g.default_cells();
        let (dlx, dly) = g.default_lengths();
        let (nx, ny) = (c.nx.unwrap_or(dnx), c.ny.unwrap_or(dny));
        let (lx, ly) = (c.lx.unwrap_or(dlx), c.ly.unwrap_or(dly));
        match g {
            Geometry::Bridge => Mesh2D::bridge_sized(nx, ny, lx, ly),
            Geometry::CantileverDensity => Mesh2D::cantilever_sized(nx, ny, lx, ly),
        }
    }

    pub fn hooke(&self) -> Result<IsotropicHooke> {
        IsotropicHooke::new(self.material.young_modulus, self.material.poisson_ratio)
    }

    pub fn simp(&self) -> SimpParams {
        SimpParams {
            eta: self.material.eta,
            p: self.material.p,
            p_schedule: self.material.p_schedule.clone(),
            filter_radius: self.material.filter_radius,
        }
    }

    pub fn samples(&self) -> Vec<Load> {
        self.uncertainty
            .samples
            .clone()
            .unwrap_or_else(|| vec![self.mesh.geometry.default_sample()])
    }

    pub fn grid_spec(&self) -> GridSpec {
        let u = &self.uncertainty;
        GridSpec {
            radius: u.radius,
            spacing: u.spacing,
            refinement_centers: self.samples(),
            refinement_spacing: u.refinement_spacing,
            refinement_radius: u
                .refinement_radius
                .unwrap_or_else(|| GridSpec::refinement_radius_for_sigma(u.sigma)),
            max_nodes: u.max_nodes,
        }
    }

    pub fn m_values(&self) -> Vec<f64> {
        self.dro
            .m
            .as_ref()
            .map_or_else(|| self.mesh.geometry.default_m(), MValues::to_vec)
    }

    pub fn dro_params(&self, m: f64) -> DroParams {
        DroParams {
            m,
            epsilon: self.dro.epsilon,
            lambda_bracket: self.dro.lambda_bracket,
            mode: self.dro.mode,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            volume_fraction: o
                .volume_fraction
                .unwrap_or_else(|| self.mesh.geometry.default_volume_fraction()),
            max_iterations: o.max_iterations,
            initial_step: o.initial_step,
            armijo: o.armijo,
            backtrack_ratio: o.backtrack_ratio,
            max_backtracks: o.max_backtracks,
            step_growth: o.step_growth,
            stagnation_tol: o.stagnation_tol,
            stagnation_window: o.stagnation_window,
        }
    }
}
