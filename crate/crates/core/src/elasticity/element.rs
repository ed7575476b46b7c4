use crate::error::{Error, Result};

/// Isotropic linear elastic material under plane stress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicHooke {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

impl Default for IsotropicHooke {
    fn default() -> Self {
        IsotropicHooke {
            young_modulus: 1.0,
            poisson_ratio: 0.3,
        }
    }
}

impl IsotropicHooke {
    pub fn new(young_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(young_modulus > 0.0 && young_modulus.is_finite()) {
            return Err(Error::config(format!(
                "material.young_modulus must be positive, got {young_modulus}"
            )));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::config(format!(
                "material.poisson_ratio must lie in (-1, 0.5), got {poisson_ratio}"
            )));
        }
        Ok(IsotropicHooke {
            young_modulus,
            poisson_ratio,
        })
    }

    /// Plane-stress constitutive matrix acting on `(εxx, εyy, γxy)`.
    pub fn plane_stress(&self) -> [[f64; 3]; 3] {
        let nu = self.poisson_ratio;
        let c = self.young_modulus / (1.0 - nu * nu);
        [
            [c, c * nu, 0.0],
            [c * nu, c, 0.0],
            [0.0, 0.0, c * 0.5 * (1.0 - nu)],
        ]
    }
}

/// Element stiffness matrix, local dof order `[u0x, u0y, u1x, u1y, ...]`.
pub type ElementMatrix = [[f64; 8]; 8];

const GAUSS: f64 = 0.577_350_269_189_625_8;
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Strain-displacement matrix of the bilinear element at reference point `(s, t)`.
fn strain_matrix(hx: f64, hy: f64, s: f64, t: f64) -> [[f64; 8]; 3] {
    let mut b = [[0.0; 8]; 3];
    for (a, &(sa, ta)) in CORNERS.iter().enumerate() {
        let dx = 0.25 * sa * (1.0 + ta * t) * 2.0 / hx;
        let dy = 0.25 * ta * (1.0 + sa * s) * 2.0 / hy;
        b[0][2 * a] = dx;
        b[1][2 * a + 1] = dy;
        b[2][2 * a] = dy;
        b[2][2 * a + 1] = dx;
    }
    b
}

/// Stiffness of an `hx × hy` bilinear element, 2×2 Gauss quadrature.
pub fn element_stiffness(hx: f64, hy: f64, hooke: &IsotropicHooke) -> ElementMatrix {
    let d = hooke.plane_stress();
    let det_j = 0.25 * hx * hy;
    let mut ke = [[0.0; 8]; 8];
    for &s in &[-GAUSS, GAUSS] {
        for &t in &[-GAUSS, GAUSS] {
            let b = strain_matrix(hx, hy, s, t);
            // db = D·B
            let mut db = [[0.0; 8]; 3];
            for r in 0..3 {
                for c in 0..8 {
                    db[r][c] = (0..3).map(|k| d[r][k] * b[k][c]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    ke[i][j] += det_j * (0..3).map(|k| b[k][i] * db[k][j]).sum::<f64>();
                }
            }
        }
    }
    ke
}

/// `uaᵀ · ke · ub` for two local displacement vectors.
pub fn element_energy(ke: &ElementMatrix, ua: &[f64; 8], ub: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        let row: f64 = (0..8).map(|j| ke[i][j] * ub[j]).sum();
        acc += ua[i] * row;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiffness_is_symmetric_with_rigid_modes() {
        let ke = element_stiffness(0.3, 0.2, &IsotropicHooke::default());
        for i in 0..8 {
            for j in 0..8 {
                assert!((ke[i][j] - ke[j][i]).abs() < 1e-14);
            }
        }
        let xs = [(0.0, 0.0), (0.3, 0.0), (0.3, 0.2), (0.0, 0.2)];
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let mut rot = [0.0; 8];
        for (a, &(x, y)) in xs.iter().enumerate() {
            rot[2 * a] = -y;
            rot[2 * a + 1] = x;
        }
        for mode in [tx, ty, rot] {
            for row in &ke {
                let f: f64 = row.iter().zip(&mode).map(|(k, u)| k * u).sum();
                assert!(f.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn uniform_strain_energy() {
        // u = (εx, 0) gives energy density E/(1-ν²) ε² / 2 times area, doubled in uᵀKu
        let hooke = IsotropicHooke::default();
        let (hx, hy) = (0.5, 0.25);
        let ke = element_stiffness(hx, hy, &hooke);
        let eps = 1e-2;
        let xs = [(0.0, 0.0), (hx, 0.0), (hx, hy), (0.0, hy)];
        let mut u = [0.0; 8];
        for (a, &(x, _)) in xs.iter().enumerate() {
            u[2 * a] = eps * x;
        }
        let energy = element_energy(&ke, &u, &u);
        let expected = hooke.young_modulus / (1.0 - 0.09) * eps * eps * hx * hy;
        assert!((energy - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_material() {
        assert!(IsotropicHooke::new(0.0, 0.3).is_err());
        assert!(IsotropicHooke::new(1.0, 0.5).is_err());
        assert!(IsotropicHooke::new(1.0, -1.0).is_err());
    }
}
