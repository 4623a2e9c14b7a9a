//! Dense symmetric linear algebra.
//!
//! [`SymMatrix`] keeps only the lower triangle (row-major packed), so symmetry
//! holds by construction. The eigensolver is cyclic Jacobi; the Cholesky
//! factorization supports a diagonal jitter for numerically rank-deficient
//! Gram matrices. `svec`/`smat` map between matrices and vectors with √2
//! off-diagonal scaling, so that vector inner products are trace inner
//! products.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

/// Number of packed entries of a symmetric matrix of the given side.
#[inline]
pub fn packed_len(side: usize) -> usize {
    side * (side + 1) / 2
}

/// Inverse of [`packed_len`]; `None` when `len` is not a triangular number.
pub fn side_from_packed_len(len: usize) -> Option<usize> {
    let side = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (packed_len(side) == len).then_some(side)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Dense symmetric matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    side: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(side: usize) -> Self {
        assert!(side >= 1, "SymMatrix side must be at least 1");
        Self {
            side,
            data: vec![0.0; packed_len(side)],
        }
    }

    pub fn identity(side: usize) -> Self {
        Self::from_fn(side, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.set(i, i, *d);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the lower triangle only.
    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(side >= 1, "SymMatrix side must be at least 1");
        let mut data = Vec::with_capacity(packed_len(side));
        for i in 0..side {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { side, data }
    }

    /// Builds from square row data. The rows must be symmetric to within
    /// `1e-12` relative; the lower triangle is kept.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let side = rows.len();
        if side == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        for row in rows {
            check_dim(side, row.len())?;
        }
        for i in 0..side {
            for j in 0..i {
                let (a, b) = (rows[i][j], rows[j][i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self::from_fn(side, |i, j| rows[i][j]))
    }

    pub fn from_packed(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("side must be at least 1".into()));
        }
        check_dim(packed_len(side), data.len())?;
        Ok(Self { side, data })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[packed_index(i, j)] = value;
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.side;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.get(i, j);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.side).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.side).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.side {
            for j in 0..=i {
                let v = self.get(i, j);
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.side);
        let n = self.side;
        let mut out = vec![0.0; n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..i {
                let a = self.data[k];
                out[i] += a * x[j];
                out[j] += a * x[i];
                k += 1;
            }
            out[i] += self.data[k] * x[i];
            k += 1;
        }
        out
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Trace inner product `Tr(A B)`.
    pub fn trace_inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.side, other.side);
        dot(&svec(self), &svec(other))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            side: self.side,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_diag(&mut self, value: f64) {
        for i in 0..self.side {
            let d = self.get(i, i);
            self.set(i, i, d + value);
        }
    }

    /// Smallest eigenvalue, via [`sym_eig`].
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let eig = sym_eig(self, 1e-10)?;
        Ok(*eig.values.last().expect("side >= 1"))
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    /// Column-major: column `j` is the eigenvector of `values[j]`.
    vectors: Vec<f64>,
    side: usize,
}

impl EigDecomp {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.side..(j + 1) * self.side]
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> f64) -> SymMatrix {
        let n = self.side;
        let weights: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = SymMatrix::zeros(n);
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let q = self.vector(j);
            let mut k = 0;
            for i in 0..n {
                let wqi = w * q[i];
                for l in 0..=i {
                    out.data[k] += wqi * q[l];
                    k += 1;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

const MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run until the off-diagonal Frobenius norm reaches roundoff level.
/// Fails if it is still above `tol·(1 + ‖A‖_F)` after the sweep cap.
pub fn sym_eig(a: &SymMatrix, tol: f64) -> Result<EigDecomp> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let n = a.side();
    let mut m = a.to_dense();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let floor = f64::EPSILON * norm;
    let mut off = off_diagonal_norm(&m, n);
    let mut sweeps = 0;
    while off > floor && sweeps < MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // rotation would be below the precision of both diagonal entries
                if apq.abs() < 1e-3 * f64::EPSILON * (app.abs().min(aqq.abs()))
                    && sweeps > 3
                {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = m[r * n + p];
                    let h = m[r * n + q];
                    let gp = c * g - s * h;
                    let hq = s * g + c * h;
                    m[r * n + p] = gp;
                    m[p * n + r] = gp;
                    m[r * n + q] = hq;
                    m[q * n + r] = hq;
                }
                for r in 0..n {
                    let g = v[r * n + p];
                    let h = v[r * n + q];
                    v[r * n + p] = c * g - s * h;
                    v[r * n + q] = s * g + c * h;
                }
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(&m, n);
    }
    if off > tol * (1.0 + norm) {
        return Err(Error::EigNoConvergence { sweeps, off_norm: off });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[col * n + r] = v[r * n + src];
        }
    }
    Ok(EigDecomp {
        values,
        vectors,
        side: n,
    })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += m[i * n + j] * m[i * n + j];
        }
    }
    (2.0 * acc).sqrt()
}

/// Lower-triangular Cholesky factor of `A + jitter·I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    side: usize,
    /// Packed lower triangle of `L`, same layout as [`SymMatrix`].
    l: Vec<f64>,
    pub jitter: f64,
}

/// Jitter used for kernel Gram matrices: `1e-8·(1 + trace/side)`.
pub fn default_jitter(a: &SymMatrix) -> f64 {
    1e-8 * (1.0 + a.trace() / a.side() as f64)
}

pub fn cholesky(a: &SymMatrix, jitter: f64) -> Result<CholFactor> {
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!("jitter must be nonnegative, got {jitter}")));
    }
    let n = a.side();
    let mut l = vec![0.0; packed_len(n)];
    for i in 0..n {
        let row_i = i * (i + 1) / 2;
        for j in 0..=i {
            let row_j = j * (j + 1) / 2;
            let mut sum = a.get(i, j);
            if i == j {
                sum += jitter;
            }
            sum -= dot(&l[row_i..row_i + j], &l[row_j..row_j + j]);
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: sum });
                }
                l[row_i + i] = sum.sqrt();
            } else {
                l[row_i + j] = sum / l[row_j + j];
            }
        }
    }
    Ok(CholFactor { side: n, l, jitter })
}

impl CholFactor {
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l[i * (i + 1) / 2 + j]
        }
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.side;
        for i in 0..n {
            let row = i * (i + 1) / 2;
            let s = dot(&self.l[row..row + i], &b[..i]);
            b[i] = (b[i] - s) / self.l[row + i];
        }
    }

    /// Solves `Lᵀ z = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.side;
        for i in (0..n).rev() {
            let row = i * (i + 1) / 2;
            b[i] /= self.l[row + i];
            let bi = b[i];
            for (k, lik) in self.l[row..row + i].iter().enumerate() {
                b[k] -= lik * bi;
            }
        }
    }

    /// Solves `(A + jitter·I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.side);
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    /// `Lᵀ x`.
    pub fn mul_upper(&self, x: &[f64]) -> Vec<f64> {
        let n = self.side;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = i * (i + 1) / 2;
            for (k, lik) in self.l[row..=row + i].iter().enumerate() {
                out[k] += lik * x[i];
            }
        }
        out
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_fn(self.side, |i, j| {
            let ri = i * (i + 1) / 2;
            let rj = j * (j + 1) / 2;
            dot(&self.l[ri..=ri + j], &self.l[rj..=rj + j])
        })
    }
}

/// Vectorizes the lower triangle, scaling off-diagonals by √2.
pub fn svec(a: &SymMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.data.len());
    for i in 0..a.side {
        for j in 0..=i {
            let v = a.get(i, j);
            out.push(if i == j { v } else { SQRT2 * v });
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> Result<SymMatrix> {
    let side = side_from_packed_len(v.len()).filter(|&s| s >= 1).ok_or_else(|| {
        Error::InvalidArgument(format!("length {} is not n(n+1)/2 for any n >= 1", v.len()))
    })?;
    let mut data = Vec::with_capacity(v.len());
    let mut k = 0;
    for i in 0..side {
        for j in 0..=i {
            data.push(if i == j { v[k] } else { v[k] / SQRT2 });
            k += 1;
        }
    }
    Ok(SymMatrix { side, data })
}

/// `svec(x xᵀ)` without forming the matrix.
pub fn svec_outer(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in 0..=i {
            let v = x[i] * x[j];
            out.push(if i == j { v } else { SQRT2 * v });
        }
    }
    out
}

/// Solves the dense row-major system `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    check_dim(n * n, a.len())?;
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = norm_inf(a).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p * n + col].abs().total_cmp(&m[q * n + col].abs()))
            .expect("nonempty range");
        if m[piv * n + col].abs() <= 1e-14 * scale {
            return Err(Error::NotPositiveDefinite {
                pivot: col,
                value: m[piv * n + col],
            });
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| m[r * n + k] * x[k]).sum();
        x[r] = (x[r] - s) / m[r * n + r];
    }
    Ok(x)
}
