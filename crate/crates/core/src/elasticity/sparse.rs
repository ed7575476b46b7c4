use crate::error::{Error, Result};

/// Symmetric matrix in compressed sparse row format (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds the pattern from `(row, col)` pairs; values start at zero.
    pub(crate) fn from_pattern(n: usize, mut entries: Vec<(usize, usize)>) -> Self {
        entries.sort_unstable();
        entries.dedup();
        let mut row_ptr = vec![0; n + 1];
        for &(r, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = entries.iter().map(|&(_, c)| c).collect::<Vec<_>>();
        let values = vec![0.0; col_idx.len()];
        SparseSymmetric {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Position of entry `(r, c)` in the value array.
    pub(crate) fn position(&self, r: usize, c: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        cols.binary_search(&c).ok().map(|k| self.row_ptr[r] + k)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Largest `|r - c|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        dense
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Banded Cholesky factor `A = L·Lᵀ`, row `i` stores `L[i][i-b..=i]`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SparseSymmetric) -> Result<Self> {
        let n = a.dim();
        let b = a.half_bandwidth();
        let w = b + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for (c, v) in a.row(i) {
                if c <= i {
                    data[i * w + (c + b - i)] = v;
                }
            }
        }
        for i in 0..n {
            let first = i.saturating_sub(b);
            for k in first..=i {
                // overlap of the stored parts of rows i and k, columns < k
                let lo = first.max(k.saturating_sub(b));
                let row_i = &data[i * w + (lo + b - i)..i * w + (k + b - i)];
                let row_k = &data[k * w + (lo + b - k)..k * w + b];
                let s = data[i * w + (k + b - i)] - dot(row_i, row_k);
                if k == i {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!(
                            "stiffness matrix is not positive definite (pivot {i}: {s:e})"
                        )));
                    }
                    data[i * w + b] = s.sqrt();
                } else {
                    data[i * w + (k + b - i)] = s / data[k * w + b];
                }
            }
        }
        Ok(BandCholesky { n, b, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let first = i.saturating_sub(b);
            let row = &self.data[i * w + (first + b - i)..i * w + b];
            y[i] = (y[i] - dot(row, &y[first..i])) / self.data[i * w + b];
        }
        for i in (0..n).rev() {
            y[i] /= self.data[i * w + b];
            let xi = y[i];
            let first = i.saturating_sub(b);
            let row = &self.data[i * w + (first + b - i)..i * w + b];
            for (yk, l) in y[first..i].iter_mut().zip(row) {
                *yk -= l * xi;
            }
        }
        y
    }
}

/// Solves `A x = rhs` with the factor, refining until the relative residual
/// `‖rhs − A x‖ / ‖rhs‖` is at most `tol`. When refinement stalls at the
/// rounding floor, the normwise backward error
/// `‖r‖∞ / (‖A‖∞ ‖x‖∞ + ‖rhs‖∞)` is held to `tol` instead.
pub fn solve_refined(
    a: &SparseSymmetric,
    factor: &BandCholesky,
    rhs: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let norm_rhs = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_rhs == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    let mut x = factor.solve(rhs);
    let mut residual = f64::INFINITY;
    for _ in 0..8 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(f, v)| f - v).collect();
        let next = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_rhs;
        if next <= tol {
            return Ok(x);
        }
        if next > 0.5 * residual {
            let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let norm_a = (0..a.dim())
                .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
                .fold(0.0f64, f64::max);
            if inf(&r) <= tol * (norm_a * inf(&x) + inf(rhs)) {
                return Ok(x);
            }
            return Err(Error::Solver { residual: next });
        }
        residual = next;
        let dx = factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    Err(Error::Solver { residual })
}
