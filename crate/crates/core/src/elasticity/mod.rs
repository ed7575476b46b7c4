//! Structured-mesh plane-stress elasticity with bilinear quadrilaterals.
//!
//! The load on `Γ_N` is a constant vector `ζ ∈ ℝ²`, so the displacement is
//! linear in `ζ` and the compliance is the quadratic form `ζᵀ M ζ`. Two
//! solves with the unit loads `(1,0)` and `(0,1)` give `M` together with the
//! energy cross-densities needed for sensitivities, for every `ζ` at once.

mod element;
mod mesh;
mod sparse;

pub use element::{element_energy, element_stiffness, ElementMatrix, IsotropicHooke};
pub use mesh::{BoundaryEdge, Mesh2D, Side};
pub use sparse::{solve_refined, BandCholesky, SparseSymmetric};

use crate::error::{Error, Result};

/// Relative residual required from every linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

const CONSTRAINED: usize = usize::MAX;

/// Nodal displacement, two components per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(mesh: &Mesh2D) -> Self {
        DisplacementField {
            values: vec![0.0; mesh.n_dofs()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        DisplacementField { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, node: usize) -> [f64; 2] {
        [self.values[2 * node], self.values[2 * node + 1]]
    }

    fn element_values(&self, dofs: &[usize; 8]) -> [f64; 8] {
        dofs.map(|d| self.values[d])
    }
}

/// Map between global dofs and the reduced (unconstrained) system.
///
/// Nodes are numbered fastest along the shorter mesh axis to keep the
/// bandwidth of the reduced matrix small.
#[derive(Debug, Clone)]
struct DofMap {
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
}

impl DofMap {
    fn new(mesh: &Mesh2D, constrained: &[bool]) -> Self {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let node_order: Vec<usize> = if nx <= ny {
            (0..mesh.n_nodes()).collect()
        } else {
            (0..=nx)
                .flat_map(|i| (0..=ny).map(move |j| (i, j)))
                .map(|(i, j)| mesh.node(i, j))
                .collect()
        };
        let mut free_index = vec![CONSTRAINED; mesh.n_dofs()];
        let mut free_dofs = Vec::new();
        for node in node_order {
            for d in [2 * node, 2 * node + 1] {
                if !constrained[d] {
                    free_index[d] = free_dofs.len();
                    free_dofs.push(d);
                }
            }
        }
        DofMap {
            free_index,
            free_dofs,
        }
    }

    fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    fn extend(&self, reduced: &[f64], n_dofs: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_dofs];
        for (&d, &v) in self.free_dofs.iter().zip(reduced) {
            full[d] = v;
        }
        full
    }
}

/// Reduced stiffness assembly with a precomputed sparsity pattern.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    mesh: Mesh2D,
    ke: ElementMatrix,
    dofs: DofMap,
    pattern: SparseSymmetric,
    scatter: Vec<usize>,
}

impl StiffnessAssembler {
    /// Assembler eliminating the mesh's Dirichlet dofs.
    pub fn new(mesh: &Mesh2D, hooke: &IsotropicHooke) -> Self {
        Self::with_constraints(mesh, hooke, &mesh.constrained_dofs())
    }

    pub fn with_constraints(mesh: &Mesh2D, hooke: &IsotropicHooke, constrained: &[bool]) -> Self {
        let ke = element_stiffness(mesh.hx(), mesh.hy(), hooke);
        let dofs = DofMap::new(mesh, constrained);
        let mut entries = Vec::with_capacity(mesh.n_elements() * 64);
        for e in 0..mesh.n_elements() {
            let local = mesh.element_dofs(e).map(|d| dofs.free_index[d]);
            for &r in local.iter().filter(|&&r| r != CONSTRAINED) {
                for &c in local.iter().filter(|&&c| c != CONSTRAINED) {
                    entries.push((r, c));
                }
            }
        }
        let pattern = SparseSymmetric::from_pattern(dofs.n_free(), entries);
        let mut scatter = Vec::with_capacity(mesh.n_elements() * 64);
        for e in 0..mesh.n_elements() {
            let local = mesh.element_dofs(e).map(|d| dofs.free_index[d]);
            for &r in &local {
                for &c in &local {
                    scatter.push(if r == CONSTRAINED || c == CONSTRAINED {
                        CONSTRAINED
                    } else {
                        pattern.position(r, c).expect("entry in pattern")
                    });
                }
            }
        }
        StiffnessAssembler {
            mesh: mesh.clone(),
            ke,
            dofs,
            pattern,
            scatter,
        }
    }

    pub fn mesh(&self) -> &Mesh2D {
        &self.mesh
    }

    pub fn element_matrix(&self) -> &ElementMatrix {
        &self.ke
    }

    /// Global dof of each row of the reduced system.
    pub fn free_dofs(&self) -> &[usize] {
        &self.dofs.free_dofs
    }

    pub fn assemble(&self, scale: &[f64]) -> Result<SparseSymmetric> {
        check_scale(&self.mesh, scale)?;
        let mut k = self.pattern.clone();
        let values = k.values_mut();
        for (e, &s) in scale.iter().enumerate() {
            let slots = &self.scatter[e * 64..(e + 1) * 64];
            for (slot, kij) in slots.iter().zip(self.ke.iter().flatten()) {
                if *slot != CONSTRAINED {
                    values[*slot] += s * kij;
                }
            }
        }
        Ok(k)
    }

    /// Solves `K(scale) u = f` for a full-length force vector `f`; constrained dofs are zero.
    fn solve_many(&self, scale: &[f64], forces: &[Vec<f64>]) -> Result<Vec<DisplacementField>> {
        let k = self.assemble(scale)?;
        let rhs: Vec<Vec<f64>> = forces.iter().map(|f| self.dofs.restrict(f)).collect();
        if rhs.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
            return Ok(forces.iter().map(|_| DisplacementField::zeros(&self.mesh)).collect());
        }
        let factor = BandCholesky::factor(&k)?;
        rhs.iter()
            .map(|r| {
                let x = solve_refined(&k, &factor, r, SOLVE_TOLERANCE)?;
                Ok(DisplacementField::from_values(
                    self.dofs.extend(&x, self.mesh.n_dofs()),
                ))
            })
            .collect()
    }
}

fn check_scale(mesh: &Mesh2D, scale: &[f64]) -> Result<()> {
    if scale.len() != mesh.n_elements() {
        return Err(Error::domain(format!(
            "scale field has {} entries for {} elements",
            scale.len(),
            mesh.n_elements()
        )));
    }
    if let Some((e, s)) = scale.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::domain(format!("scale of element {e} must be positive, got {s}")));
    }
    Ok(())
}

/// Compliance `C(ζ) = ζᵀ M ζ` together with the unit-load fields it was built from.
#[derive(Debug, Clone)]
pub struct ComplianceForm {
    matrix: [[f64; 2]; 2],
    work_matrix: [[f64; 2]; 2],
    u_basis: [DisplacementField; 2],
    g_basis: [Vec<f64>; 3],
}

impl ComplianceForm {
    /// `M`, computed from the strain energies `∫ scale·A e(u_a):e(u_b)`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.matrix
    }

    /// `M`, computed from the load work `f_a · u_b`.
    pub fn work_matrix(&self) -> [[f64; 2]; 2] {
        self.work_matrix
    }

    pub fn unit_displacements(&self) -> &[DisplacementField; 2] {
        &self.u_basis
    }

    /// Element-averaged reference energy densities `A e(u_a):e(u_b)` for
    /// `(a,b) = (1,1), (1,2), (2,2)`, not scaled by the SIMP law.
    pub fn energy_basis(&self) -> &[Vec<f64>; 3] {
        &self.g_basis
    }

    pub fn n_elements(&self) -> usize {
        self.g_basis[0].len()
    }

    pub fn compliance(&self, load: [f64; 2]) -> f64 {
        let m = &self.matrix;
        load[0] * load[0] * m[0][0] + 2.0 * load[0] * load[1] * m[0][1] + load[1] * load[1] * m[1][1]
    }

    pub fn displacement(&self, load: [f64; 2]) -> DisplacementField {
        let [u1, u2] = &self.u_basis;
        DisplacementField::from_values(
            u1.values
                .iter()
                .zip(&u2.values)
                .map(|(a, b)| load[0] * a + load[1] * b)
                .collect(),
        )
    }

    /// `Σ_ab S_ab g_ab` per element for a symmetric 2×2 moment matrix `S`.
    pub fn gradient_fields(&self, moments: [[f64; 2]; 2]) -> Result<Vec<f64>> {
        let s = moments;
        let scale = s.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if (s[0][1] - s[1][0]).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::domain(format!(
                "moment matrix is not symmetric: {} vs {}",
                s[0][1], s[1][0]
            )));
        }
        let [g11, g12, g22] = &self.g_basis;
        Ok((0..g11.len())
            .map(|e| s[0][0] * g11[e] + 2.0 * s[0][1] * g12[e] + s[1][1] * g22[e])
            .collect())
    }
}

/// Mesh, material and assembly cache for repeated solves at varying densities.
#[derive(Debug, Clone)]
pub struct ElasticModel {
    assembler: StiffnessAssembler,
    unit_forces: [Vec<f64>; 2],
}

impl ElasticModel {
    pub fn new(mesh: &Mesh2D, hooke: &IsotropicHooke) -> Self {
        ElasticModel {
            assembler: StiffnessAssembler::new(mesh, hooke),
            unit_forces: [mesh.traction_vector([1.0, 0.0]), mesh.traction_vector([0.0, 1.0])],
        }
    }

    pub fn mesh(&self) -> &Mesh2D {
        self.assembler.mesh()
    }

    pub fn stiffness(&self, scale: &[f64]) -> Result<SparseSymmetric> {
        self.assembler.assemble(scale)
    }

    /// Two unit-load solves and the resulting quadratic form.
    pub fn compliance_form(&self, scale: &[f64]) -> Result<ComplianceForm> {
        let fields = self.assembler.solve_many(scale, &self.unit_forces)?;
        let [u1, u2]: [DisplacementField; 2] = fields.try_into().expect("two fields");
        Ok(self.form_from_fields(scale, u1, u2))
    }

    fn form_from_fields(
        &self,
        scale: &[f64],
        u1: DisplacementField,
        u2: DisplacementField,
    ) -> ComplianceForm {
        let mesh = self.mesh();
        let ke = self.assembler.element_matrix();
        let area = mesh.element_area();
        let n = mesh.n_elements();
        let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for e in 0..n {
            let dofs = mesh.element_dofs(e);
            let a = u1.element_values(&dofs);
            let b = u2.element_values(&dofs);
            g[0][e] = element_energy(ke, &a, &a) / area;
            g[1][e] = element_energy(ke, &a, &b) / area;
            g[2][e] = element_energy(ke, &b, &b) / area;
        }
        let energy = |k: usize| -> f64 { scale.iter().zip(&g[k]).map(|(s, v)| s * v).sum::<f64>() * area };
        let (m11, m12, m22) = (energy(0), energy(1), energy(2));
        let work = |f: &[f64], u: &DisplacementField| -> f64 {
            f.iter().zip(&u.values).map(|(a, b)| a * b).sum()
        };
        let w12 = 0.5 * (work(&self.unit_forces[0], &u2) + work(&self.unit_forces[1], &u1));
        ComplianceForm {
            matrix: [[m11, m12], [m12, m22]],
            work_matrix: [
                [work(&self.unit_forces[0], &u1), w12],
                [w12, work(&self.unit_forces[1], &u2)],
            ],
            u_basis: [u1, u2],
            g_basis: g,
        }
    }

    /// Displacement for a single load `ζ` by a direct solve.
    pub fn solve_load(&self, scale: &[f64], load: [f64; 2]) -> Result<DisplacementField> {
        let f = self.mesh().traction_vector(load);
        let mut fields = self.assembler.solve_many(scale, &[f])?;
        Ok(fields.pop().expect("one field"))
    }

    /// Compliance `f(ζ) · u(ζ)` from a direct solve with load `ζ`.
    pub fn compliance_direct(&self, scale: &[f64], load: [f64; 2]) -> Result<f64> {
        let u = self.solve_load(scale, load)?;
        let f = self.mesh().traction_vector(load);
        Ok(f.iter().zip(u.values()).map(|(a, b)| a * b).sum())
    }

    /// Element-averaged reference energy density `A e(u):e(u)` of a displacement.
    pub fn energy_density(&self, u: &DisplacementField) -> Vec<f64> {
        let mesh = self.mesh();
        let ke = self.assembler.element_matrix();
        (0..mesh.n_elements())
            .map(|e| {
                let ue = u.element_values(&mesh.element_dofs(e));
                element_energy(ke, &ue, &ue) / mesh.element_area()
            })
            .collect()
    }
}

/// Global stiffness with the mesh's Dirichlet dofs eliminated.
pub fn assemble_stiffness(
    mesh: &Mesh2D,
    hooke: &IsotropicHooke,
    scale: &[f64],
) -> Result<SparseSymmetric> {
    StiffnessAssembler::new(mesh, hooke).assemble(scale)
}

/// Displacements for the unit tractions `(1,0)` and `(0,1)` on the Neumann edges.
pub fn solve_unit_loads(
    mesh: &Mesh2D,
    stiffness: &SparseSymmetric,
) -> Result<(DisplacementField, DisplacementField)> {
    let dofs = DofMap::new(mesh, &mesh.constrained_dofs());
    if dofs.n_free() != stiffness.dim() {
        return Err(Error::domain(format!(
            "stiffness of dimension {} does not match {} free dofs",
            stiffness.dim(),
            dofs.n_free()
        )));
    }
    if dofs.n_free() + 3 > mesh.n_dofs() {
        return Err(Error::domain("at least 3 degrees of freedom must be constrained"));
    }
    let rhs = [[1.0, 0.0], [0.0, 1.0]].map(|load| dofs.restrict(&mesh.traction_vector(load)));
    if rhs.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
        return Ok((DisplacementField::zeros(mesh), DisplacementField::zeros(mesh)));
    }
    let factor = BandCholesky::factor(stiffness)?;
    let solve = |r: &[f64]| -> Result<DisplacementField> {
        let x = solve_refined(stiffness, &factor, r, SOLVE_TOLERANCE)?;
        Ok(DisplacementField::from_values(dofs.extend(&x, mesh.n_dofs())))
    };
    Ok((solve(&rhs[0])?, solve(&rhs[1])?))
}

pub fn compliance_form(
    mesh: &Mesh2D,
    hooke: &IsotropicHooke,
    scale: &[f64],
) -> Result<ComplianceForm> {
    ElasticModel::new(mesh, hooke).compliance_form(scale)
}

/// Load-averaged energy density `Σ_ab S_ab g_ab(x)`.
pub fn compliance_gradient_fields(form: &ComplianceForm, moments: [[f64; 2]; 2]) -> Result<Vec<f64>> {
    form.gradient_fields(moments)
}

/// Solves with prescribed (possibly nonzero) displacements on the listed dofs
/// and external nodal forces elsewhere. Returns the full displacement vector.
pub fn solve_prescribed(
    mesh: &Mesh2D,
    hooke: &IsotropicHooke,
    scale: &[f64],
    prescribed: &[(usize, f64)],
    forces: &[f64],
) -> Result<Vec<f64>> {
    let mut constrained = vec![false; mesh.n_dofs()];
    let mut values = vec![0.0; mesh.n_dofs()];
    for &(d, v) in prescribed {
        if d >= mesh.n_dofs() {
            return Err(Error::domain(format!("prescribed dof {d} out of range")));
        }
        constrained[d] = true;
        values[d] = v;
    }
    let assembler = StiffnessAssembler::with_constraints(mesh, hooke, &constrained);
    let k = assembler.assemble(scale)?;
    let mut rhs = assembler.dofs.restrict(forces);
    for (e, &s) in scale.iter().enumerate() {
        let dofs = mesh.element_dofs(e);
        for (i, &di) in dofs.iter().enumerate() {
            let r = assembler.dofs.free_index[di];
            if r == CONSTRAINED {
                continue;
            }
            for (j, &dj) in dofs.iter().enumerate() {
                if constrained[dj] {
                    rhs[r] -= s * assembler.ke[i][j] * values[dj];
                }
            }
        }
    }
    let x = if rhs.iter().all(|v| *v == 0.0) {
        vec![0.0; rhs.len()]
    } else {
        let factor = BandCholesky::factor(&k)?;
        solve_refined(&k, &factor, &rhs, SOLVE_TOLERANCE)?
    };
    let mut full = assembler.dofs.extend(&x, mesh.n_dofs());
    for &(d, v) in prescribed {
        full[d] = v;
    }
    Ok(full)
}
