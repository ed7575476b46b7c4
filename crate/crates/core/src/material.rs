//! SIMP interpolation, penalization continuation and density filtering.

use crate::error::{Error, Result};
use crate::elasticity::Mesh2D;

/// SIMP law `η + (1 − η) h^p` with a continuation schedule on `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpParams {
    pub eta: f64,
    pub p: f64,
    /// `(iteration, p)` switch points, strictly increasing in iteration.
    pub p_schedule: Vec<(usize, f64)>,
    /// Filter radius in element widths; `0` disables filtering.
    pub filter_radius: f64,
}

impl Default for SimpParams {
    fn default() -> Self {
        SimpParams {
            eta: 1e-3,
            p: 1.0,
            p_schedule: vec![(0, 1.0), (80, 2.0), (160, 3.0)],
            filter_radius: 1.5,
        }
    }
}

impl SimpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config(format!("material.eta must lie in (0,1), got {}", self.eta)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::config(format!("material.p must be >= 1, got {}", self.p)));
        }
        for w in self.p_schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::config(
                    "material.p_schedule: iterations must be strictly increasing",
                ));
            }
        }
        if let Some((_, p)) = self.p_schedule.iter().find(|(_, p)| !(*p >= 1.0 && p.is_finite())) {
            return Err(Error::config(format!("material.p_schedule: p must be >= 1, got {p}")));
        }
        if !(self.filter_radius >= 0.0 && self.filter_radius.is_finite()) {
            return Err(Error::config(format!(
                "material.filter_radius must be >= 0, got {}",
                self.filter_radius
            )));
        }
        Ok(())
    }

    /// Penalization exponent in effect at `iteration`; `p` before the first switch.
    pub fn p_at(&self, iteration: usize) -> f64 {
        self.p_schedule
            .iter()
            .take_while(|(it, _)| *it <= iteration)
            .last()
            .map_or(self.p, |(_, p)| *p)
    }

    /// Last exponent reached by the schedule.
    pub fn final_p(&self) -> f64 {
        self.p_schedule.last().map_or(self.p, |(_, p)| *p)
    }

    /// Same parameters with the exponent fixed to `p`.
    pub fn with_p(&self, p: f64) -> Self {
        SimpParams {
            p,
            ..self.clone()
        }
    }
}

/// Element-wise density `h ∈ [0,1]` on a structured mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    nx: usize,
    ny: usize,
    cell_area: f64,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(mesh: &Mesh2D, values: Vec<f64>) -> Result<Self> {
        Self::from_grid(mesh.nx(), mesh.ny(), mesh.element_area(), values)
    }

    pub fn from_grid(nx: usize, ny: usize, cell_area: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::domain(format!(
                "density has {} values for a {nx}x{ny} grid",
                values.len()
            )));
        }
        if let Some((e, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("density of element {e} is {v}, outside [0,1]")));
        }
        Ok(DensityField {
            nx,
            ny,
            cell_area,
            values,
        })
    }

    pub fn uniform(mesh: &Mesh2D, value: f64) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.n_elements()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    /// `Vol(h) = Σ h_e |e|`.
    pub fn volume(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area
    }

    pub fn domain_area(&self) -> f64 {
        (self.nx * self.ny) as f64 * self.cell_area
    }

    /// Volume as a fraction of the hold-all domain.
    pub fn volume_fraction(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `L²(D)` inner product with another element-wise field.
    pub fn inner(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum::<f64>() * self.cell_area
    }
}

/// `η + (1 − η) h^p` per element.
pub fn simp_scale(h: &DensityField, params: &SimpParams) -> Vec<f64> {
    simp_scale_values(h.values(), params)
}

pub(crate) fn simp_scale_values(h: &[f64], params: &SimpParams) -> Vec<f64> {
    let (eta, p) = (params.eta, params.p);
    h.iter().map(|&v| eta + (1.0 - eta) * v.powf(p)).collect()
}

/// `p (1 − η) h^{p−1}` per element.
pub fn simp_scale_derivative(h: &DensityField, params: &SimpParams) -> Vec<f64> {
    simp_scale_derivative_values(h.values(), params)
}

pub(crate) fn simp_scale_derivative_values(h: &[f64], params: &SimpParams) -> Vec<f64> {
    let (eta, p) = (params.eta, params.p);
    h.iter()
        .map(|&v| {
            if p == 1.0 {
                1.0 - eta
            } else if v == 0.0 {
                0.0
            } else {
                p * (1.0 - eta) * v.powf(p - 1.0)
            }
        })
        .collect()
}

/// Linear hat filter `w(d) = max(0, r − |d|)` with mirror (half-sample
/// symmetric) boundary extension.
///
/// With mirrored boundaries every row of the filter matrix carries the full
/// kernel mass, and the matrix is symmetric, so the filter preserves
/// constants, bounds and total volume, and is its own transpose.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    nx: usize,
    ny: usize,
    taps: Vec<(isize, isize, f64)>,
}

fn fold(k: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = k.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

impl DensityFilter {
    pub fn new(nx: usize, ny: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::domain(format!("filter radius must be >= 0, got {radius}")));
        }
        let reach = radius.ceil() as isize;
        let mut taps = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let w = radius - ((dx * dx + dy * dy) as f64).sqrt();
                if w > 0.0 {
                    taps.push((dx, dy, w));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= total;
        }
        Ok(DensityFilter { nx, ny, taps })
    }

    pub fn for_mesh(mesh: &Mesh2D, radius: f64) -> Result<Self> {
        Self::new(mesh.nx(), mesh.ny(), radius)
    }

    pub fn is_identity(&self) -> bool {
        self.taps.len() <= 1
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return x.to_vec();
        }
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                out[j * nx + i] = self
                    .taps
                    .iter()
                    .map(|&(dx, dy, w)| {
                        let si = fold(i as isize + dx, nx);
                        let sj = fold(j as isize + dy, ny);
                        w * x[sj * nx + si]
                    })
                    .sum();
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply), used to pull sensitivities back to the design.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return y.to_vec();
        }
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let v = y[j * nx + i];
                for &(dx, dy, w) in &self.taps {
                    let si = fold(i as isize + dx, nx);
                    let sj = fold(j as isize + dy, ny);
                    out[sj * nx + si] += w * v;
                }
            }
        }
        out
    }
}

/// Filtered copy of `h`; `radius` is measured in element widths.
pub fn density_filter(h: &DensityField, radius: f64) -> Result<DensityField> {
    let filter = DensityFilter::new(h.nx, h.ny, radius)?;
    // convex combinations stay in [0,1] up to rounding
    let values = filter.apply(&h.values).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    DensityField::from_grid(h.nx, h.ny, h.cell_area, values)
}
