use crate::error::{Error, Result};

/// Side of the rectangular hold-all domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// A boundary edge of the structured mesh carrying a traction load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub length: f64,
}

/// Structured `nx × ny` mesh of rectangular bilinear elements on `[0,lx]×[0,ly]`.
///
/// Node `(i, j)` has index `j * (nx + 1) + i`, element `(ex, ey)` has index
/// `ey * nx + ex`; `j = 0` is the bottom row.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    dirichlet_nodes: Vec<usize>,
    neumann_edges: Vec<BoundaryEdge>,
}

impl Mesh2D {
    pub fn new(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        mut dirichlet_nodes: Vec<usize>,
        neumann_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::config(format!(
                "mesh: need at least 2 elements per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::config(format!(
                "mesh: side lengths must be positive, got {lx}x{ly}"
            )));
        }
        dirichlet_nodes.sort_unstable();
        dirichlet_nodes.dedup();
        let mesh = Mesh2D {
            nx,
            ny,
            lx,
            ly,
            dirichlet_nodes,
            neumann_edges,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Mesh without any boundary conditions.
    pub fn free(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(nx, ny, lx, ly, Vec::new(), Vec::new())
    }

    /// Unit square clamped on the bottom side and loaded on the whole top side.
    pub fn bridge(nx: usize, ny: usize) -> Result<Self> {
        Self::bridge_sized(nx, ny, 1.0, 1.0)
    }

    /// `lx × ly` box clamped on the bottom side and loaded on the whole top side.
    pub fn bridge_sized(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let free = Self::free(nx, ny, lx, ly)?;
        let dirichlet = free.side_nodes(Side::Bottom);
        let neumann = free.side_edges(Side::Top);
        Self::new(nx, ny, lx, ly, dirichlet, neumann)
    }

    /// `2 × 1` box clamped on the left side and loaded on a centered segment of
    /// the right side of length `0.1 · ly`.
    pub fn cantilever(nx: usize, ny: usize) -> Result<Self> {
        Self::cantilever_sized(nx, ny, 2.0, 1.0)
    }

    /// `lx × ly` box clamped on the left side, loaded on a centered segment of
    /// the right side of length `0.1 · ly`.
    pub fn cantilever_sized(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let free = Self::free(nx, ny, lx, ly)?;
        let dirichlet = free.side_nodes(Side::Left);
        let hy = ly / ny as f64;
        let (lo, hi) = (0.45 * ly, 0.55 * ly);
        let mut neumann: Vec<BoundaryEdge> = free
            .side_edges(Side::Right)
            .into_iter()
            .enumerate()
            .filter(|(j, _)| {
                let mid = (*j as f64 + 0.5) * hy;
                mid > lo && mid < hi
            })
            .map(|(_, e)| e)
            .collect();
        if neumann.is_empty() {
            // segment thinner than one element: load the edge containing mid-height
            let j = ((0.5 * ly / hy).floor() as usize).min(ny - 1);
            neumann.push(free.side_edges(Side::Right)[j]);
        }
        Self::new(nx, ny, lx, ly, dirichlet, neumann)
    }

    fn validate(&self) -> Result<()> {
        let n_nodes = self.n_nodes();
        if let Some(&bad) = self.dirichlet_nodes.iter().find(|&&n| n >= n_nodes) {
            return Err(Error::config(format!("mesh: Dirichlet node {bad} out of range")));
        }
        if let Some(&bad) = self.dirichlet_nodes.iter().find(|&&n| !self.is_boundary_node(n)) {
            return Err(Error::config(format!("mesh: Dirichlet node {bad} is not on the boundary")));
        }
        for edge in &self.neumann_edges {
            let [a, b] = edge.nodes;
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::config("mesh: Neumann edge node out of range"));
            }
            let (ia, ja) = self.node_coords(a);
            let (ib, jb) = self.node_coords(b);
            let on_side = if ja == jb && ia.abs_diff(ib) == 1 {
                (ja == 0 || ja == self.ny) && (edge.length - self.hx()).abs() <= 1e-12 * self.lx
            } else if ia == ib && ja.abs_diff(jb) == 1 {
                (ia == 0 || ia == self.nx) && (edge.length - self.hy()).abs() <= 1e-12 * self.ly
            } else {
                false
            };
            if !on_side {
                return Err(Error::config(format!(
                    "mesh: Neumann edge {a}-{b} is not a boundary edge of matching length"
                )));
            }
            if self.dirichlet_nodes.binary_search(&a).is_ok()
                || self.dirichlet_nodes.binary_search(&b).is_ok()
            {
                return Err(Error::config(format!(
                    "mesh: Neumann edge {a}-{b} touches a Dirichlet node"
                )));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn element_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Measure of the hold-all domain.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet_nodes
    }

    pub fn neumann_edges(&self) -> &[BoundaryEdge] {
        &self.neumann_edges
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_position(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_coords(node);
        [i as f64 * self.hx(), j as f64 * self.hy()]
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (i, j) = self.node_coords(node);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Corner nodes of element `e`, counter-clockwise from the lower-left corner.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = (e % self.nx, e / self.nx);
        let n0 = self.node(ex, ey);
        let n3 = self.node(ex, ey + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    /// Global degrees of freedom of element `e` in the local order
    /// `[u0x, u0y, u1x, u1y, u2x, u2y, u3x, u3y]`.
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn side_nodes(&self, side: Side) -> Vec<usize> {
        match side {
            Side::Bottom => (0..=self.nx).map(|i| self.node(i, 0)).collect(),
            Side::Top => (0..=self.nx).map(|i| self.node(i, self.ny)).collect(),
            Side::Left => (0..=self.ny).map(|j| self.node(0, j)).collect(),
            Side::Right => (0..=self.ny).map(|j| self.node(self.nx, j)).collect(),
        }
    }

    pub fn side_edges(&self, side: Side) -> Vec<BoundaryEdge> {
        let length = match side {
            Side::Bottom | Side::Top => self.hx(),
            Side::Left | Side::Right => self.hy(),
        };
        self.side_nodes(side)
            .windows(2)
            .map(|w| BoundaryEdge {
                nodes: [w[0], w[1]],
                length,
            })
            .collect()
    }

    /// Consistent nodal forces for the constant traction `load` on the Neumann edges.
    pub fn traction_vector(&self, load: [f64; 2]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_dofs()];
        for edge in &self.neumann_edges {
            for &n in &edge.nodes {
                f[2 * n] += 0.5 * edge.length * load[0];
                f[2 * n + 1] += 0.5 * edge.length * load[1];
            }
        }
        f
    }

    /// Per-dof flag marking the homogeneous Dirichlet constraints.
    pub fn constrained_dofs(&self) -> Vec<bool> {
        let mut fixed = vec![false; self.n_dofs()];
        for &n in &self.dirichlet_nodes {
            fixed[2 * n] = true;
            fixed[2 * n + 1] = true;
        }
        fixed
    }
}
