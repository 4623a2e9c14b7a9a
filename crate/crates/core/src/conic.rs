//! Operator-splitting solver for standard-form cone programs
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x + s = b,   s ∈ 𝒦
//! ```
//!
//! where 𝒦 is a product of zero, nonnegative, second-order and PSD cones.
//! The solver runs ADMM on the homogeneous self-dual embedding: each
//! iteration solves one linear system with a matrix that is factorized once,
//! projects onto the cone, and updates the dual variable. `A` is equilibrated
//! (Ruiz scaling, uniform within each second-order and PSD block) when
//! scaling is on. Residuals are checked every [`CHECK_INTERVAL`] iterations in
//! the original, unscaled units.
//!
//! PSD blocks are stored as `svec` of their matrix (lower triangle, row by
//! row, off-diagonals scaled by √2), so that vector inner products are trace
//! inner products.
//!
//! The dual problem is `maximize −bᵀy  subject to  Aᵀy + c = 0, y ∈ 𝒦*`.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky, dot, norm2, packed_len, smat, svec, sym_eig, CholFactor, SymMatrix};

pub const CHECK_INTERVAL: usize = 25;

/// One block of the cone product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `{0}^dim`
    Zero(usize),
    /// `ℝ₊^dim`
    NonNeg(usize),
    /// `{(t, z) : ‖z‖ ≤ t}` of total dimension `dim`.
    SecondOrder(usize),
    /// Symmetric PSD matrices of the given side, stored via `svec`.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::NonNeg(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(side) => packed_len(side),
        }
    }

    fn tag(&self) -> (&'static str, usize) {
        match *self {
            Cone::Zero(d) => ("z", d),
            Cone::NonNeg(d) => ("l", d),
            Cone::SecondOrder(d) => ("q", d),
            Cone::Psd(s) => ("s", s),
        }
    }
}

/// Ordered list of cone blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConeSpec {
    pub blocks: Vec<Cone>,
}

impl ConeSpec {
    pub fn new(blocks: Vec<Cone>) -> Result<Self> {
        for b in &blocks {
            match *b {
                Cone::SecondOrder(d) if d < 2 => {
                    return Err(Error::InvalidArgument(
                        "second-order cone needs dimension >= 2".into(),
                    ))
                }
                _ if b.dim() == 0 => {
                    return Err(Error::InvalidArgument("cone block of dimension 0".into()))
                }
                _ => {}
            }
        }
        Ok(Self { blocks })
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(Cone::dim).sum()
    }

    fn ranges(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        let mut start = 0;
        self.blocks.iter().map(move |&c| {
            let r = start..start + c.dim();
            start = r.end;
            (c, r)
        })
    }
}

impl fmt::Display for ConeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|c| {
                let (t, d) = c.tag();
                format!("{t}{d}")
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({r}, {c})")));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut ci = Vec::with_capacity(col_idx.len());
        let mut vs = Vec::with_capacity(values.len());
        for ((r, c), v) in row_of.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                ci.push(c);
                vs.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: ci,
            values: vs,
        })
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        let trip = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, data[r * cols + c]))
            .filter(|t| t.2 != 0.0)
            .collect();
        Self::from_triplets(rows, cols, trip)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let (c, v) = self.row(r);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    /// `y = Aᵀ x`
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate().take(self.rows) {
            if xr == 0.0 {
                continue;
            }
            let (c, v) = self.row(r);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * xr;
            }
        }
        out
    }
}

/// `min cᵀx  s.t.  A x + s = b, s ∈ cones`.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub cones: ConeSpec,
}

impl ConicProblem {
    pub fn new(a: SparseMatrix, b: Vec<f64>, c: Vec<f64>, cones: ConeSpec) -> Result<Self> {
        let p = Self { a, b, c, cones };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.a.rows(), self.b.len())?;
        check_dim(self.a.cols(), self.c.len())?;
        check_dim(self.a.rows(), self.cones.total_dim())?;
        if self.a.cols() == 0 || self.a.rows() == 0 {
            return Err(Error::InvalidArgument("empty cone program".into()));
        }
        if let Some(r) = (0..self.a.rows()).find(|&r| self.a.row(r).0.is_empty()) {
            return Err(Error::InvalidArgument(format!("row {r} of A is all zero")));
        }
        if self.b.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in b or c".into()));
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.a.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.rows()
    }

    /// Writes a plain-text dump:
    ///
    /// ```text
    /// %%hetband-conic 1
    /// cones z3 l2 q3 s2          (z zero, l nonneg, q second-order dim, s PSD side)
    /// <rows> <cols> <nnz>
    /// <row> <col> <value>        (nnz lines, 1-based)
    /// b
    /// <value>                    (rows lines)
    /// c
    /// <value>                    (cols lines)
    /// ```
    ///
    /// Values use Rust's shortest round-trip formatting.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%hetband-conic 1")?;
        writeln!(w, "cones {}", self.cones)?;
        writeln!(w, "{} {} {}", self.a.rows(), self.a.cols(), self.a.nnz())?;
        for (r, c, v) in self.a.triplets() {
            writeln!(w, "{} {} {:?}", r + 1, c + 1, v)?;
        }
        writeln!(w, "b")?;
        for v in &self.b {
            writeln!(w, "{v:?}")?;
        }
        writeln!(w, "c")?;
        for v in &self.c {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }

    /// Reads a file written by [`ConicProblem::write_dump`].
    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("conic dump: {msg}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        if next()?.trim() != "%%hetband-conic 1" {
            return Err(bad("missing header"));
        }
        let cone_line = next()?;
        let mut blocks = Vec::new();
        for tok in cone_line
            .strip_prefix("cones")
            .ok_or_else(|| bad("missing cones line"))?
            .split_whitespace()
        {
            let (t, d) = tok.split_at(1);
            let d: usize = d.parse().map_err(|_| bad("bad cone size"))?;
            blocks.push(match t {
                "z" => Cone::Zero(d),
                "l" => Cone::NonNeg(d),
                "q" => Cone::SecondOrder(d),
                "s" => Cone::Psd(d),
                _ => return Err(bad("unknown cone tag")),
            });
        }
        let dims: Vec<usize> = next()?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad size line")))
            .collect::<Result<_>>()?;
        let [m, n, nnz] = dims[..] else {
            return Err(bad("size line needs three numbers"));
        };
        let mut trip = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let line = next()?;
            let mut it = line.split_whitespace();
            let r: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad entry"))?;
            let c: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad entry"))?;
            let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad entry"))?;
            if r == 0 || c == 0 {
                return Err(bad("indices are 1-based"));
            }
            trip.push((r - 1, c - 1, v));
        }
        let mut read_vec = |tag: &str, len: usize| -> Result<Vec<f64>> {
            if next()?.trim() != tag {
                return Err(bad(&format!("missing '{tag}' section")));
            }
            (0..len)
                .map(|_| next()?.trim().parse::<f64>().map_err(|_| bad("bad value")))
                .collect()
        };
        let b = read_vec("b", m)?;
        let c = read_vec("c", n)?;
        Self::new(
            SparseMatrix::from_triplets(m, n, trip)?,
            b,
            c,
            ConeSpec::new(blocks)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Solved,
    MaxIters,
    PrimalInfeasible,
    DualInfeasible,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Solved => "solved",
            Status::MaxIters => "max_iters",
            Status::PrimalInfeasible => "primal_infeasible",
            Status::DualInfeasible => "dual_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: Status,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub eps: f64,
    pub max_iter: usize,
    pub over_relaxation: f64,
    /// Scale applied to the equilibrated `b` and `c`; trades primal against
    /// dual progress.
    pub penalty: f64,
    pub scaling: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_iter: 50_000,
            over_relaxation: 1.5,
            penalty: 1.0,
            scaling: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if !(self.over_relaxation > 1.0 && self.over_relaxation < 2.0) {
            return Err(Error::InvalidArgument("over_relaxation must lie in (1, 2)".into()));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::InvalidArgument("penalty must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Euclidean projection onto the cone product.
pub fn project_cone(v: &[f64], cones: &ConeSpec) -> Result<Vec<f64>> {
    check_dim(cones.total_dim(), v.len())?;
    let mut out = v.to_vec();
    project_in_place(&mut out, cones, false)?;
    Ok(out)
}

/// Euclidean projection onto the dual cone product (the zero cone's dual is
/// the whole space; the other cones are self-dual).
pub fn project_dual_cone(v: &[f64], cones: &ConeSpec) -> Result<Vec<f64>> {
    check_dim(cones.total_dim(), v.len())?;
    let mut out = v.to_vec();
    project_in_place(&mut out, cones, true)?;
    Ok(out)
}

fn project_in_place(v: &mut [f64], cones: &ConeSpec, dual: bool) -> Result<()> {
    for (cone, range) in cones.ranges() {
        let block = &mut v[range];
        match cone {
            Cone::Zero(_) => {
                if !dual {
                    block.fill(0.0);
                }
            }
            Cone::NonNeg(_) => {
                for x in block.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            Cone::SecondOrder(_) => project_soc(block),
            Cone::Psd(_) => project_psd(block)?,
        }
    }
    Ok(())
}

fn project_soc(block: &mut [f64]) {
    let t = block[0];
    let z_norm = norm2(&block[1..]);
    if z_norm <= t {
        return;
    }
    if z_norm <= -t {
        block.fill(0.0);
        return;
    }
    let scale = 0.5 * (z_norm + t);
    block[0] = scale;
    let f = scale / z_norm;
    for z in &mut block[1..] {
        *z *= f;
    }
}

fn project_psd(block: &mut [f64]) -> Result<()> {
    if block.len() == 1 {
        block[0] = block[0].max(0.0);
        return Ok(());
    }
    let m = smat(block)?;
    let eig = sym_eig(&m, 1e-9)?;
    if eig.values.iter().all(|&l| l >= 0.0) {
        return Ok(());
    }
    let projected = if eig.values.iter().all(|&l| l <= 0.0) {
        SymMatrix::zeros(m.side())
    } else {
        eig.reconstruct_with(|l| l.max(0.0))
    };
    block.copy_from_slice(&svec(&projected));
    Ok(())
}

/// Factorization of `I + ÂᵀÂ`.
///
/// Rows of `Â` with a single nonzero only touch the diagonal; when the
/// remaining rows are fewer than the columns the system is solved by the
/// Woodbury identity on those rows, otherwise the normal matrix is formed
/// densely.
enum NormalSolver {
    Dense(CholFactor),
    Woodbury {
        inv_diag: Vec<f64>,
        rows: Vec<usize>,
        capacitance: CholFactor,
    },
}

impl NormalSolver {
    fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.cols();
        let mut diag = vec![1.0; n];
        let mut general = Vec::new();
        for r in 0..a.rows() {
            let (c, v) = a.row(r);
            if c.len() == 1 {
                diag[c[0]] += v[0] * v[0];
            } else {
                general.push(r);
            }
        }
        if general.len() < n {
            let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
            let k = general.len();
            let mut cap = SymMatrix::identity(k.max(1));
            for (i, &ri) in general.iter().enumerate() {
                let (ci, vi) = a.row(ri);
                for (j, &rj) in general.iter().enumerate().take(i + 1) {
                    let (cj, vj) = a.row(rj);
                    let s = sparse_weighted_dot(ci, vi, cj, vj, &inv_diag);
                    cap.set(i, j, cap.get(i, j) + s);
                }
            }
            let capacitance = cholesky(&cap, 0.0)
                .map_err(|e| Error::Solver(format!("capacitance factorization failed: {e}")))?;
            Ok(NormalSolver::Woodbury {
                inv_diag,
                rows: general,
                capacitance,
            })
        } else {
            let mut m = SymMatrix::from_diag(&diag);
            for &r in &general {
                let (c, v) = a.row(r);
                for (p, (&ip, &vp)) in c.iter().zip(v).enumerate() {
                    for (&iq, &vq) in c.iter().zip(v).take(p + 1) {
                        // columns are sorted, so ip >= iq
                        m.set(ip, iq, m.get(ip, iq) + vp * vq);
                    }
                }
            }
            Ok(NormalSolver::Dense(cholesky(&m, 0.0).map_err(|e| {
                Error::Solver(format!("normal-matrix factorization failed: {e}"))
            })?))
        }
    }

    fn solve(&self, a: &SparseMatrix, rhs: &mut [f64]) {
        match self {
            NormalSolver::Dense(f) => f.solve_in_place(rhs),
            NormalSolver::Woodbury {
                inv_diag,
                rows,
                capacitance,
            } => {
                for (x, d) in rhs.iter_mut().zip(inv_diag) {
                    *x *= d;
                }
                if rows.is_empty() {
                    return;
                }
                let mut t: Vec<f64> = rows
                    .iter()
                    .map(|&r| {
                        let (c, v) = a.row(r);
                        c.iter().zip(v).map(|(&j, &a)| a * rhs[j]).sum()
                    })
                    .collect();
                capacitance.solve_in_place(&mut t);
                for (&r, &tr) in rows.iter().zip(&t) {
                    let (c, v) = a.row(r);
                    for (&j, &a) in c.iter().zip(v) {
                        rhs[j] -= inv_diag[j] * a * tr;
                    }
                }
            }
        }
    }
}

fn sparse_weighted_dot(ci: &[usize], vi: &[f64], cj: &[usize], vj: &[f64], w: &[f64]) -> f64 {
    let (mut p, mut q, mut acc) = (0, 0, 0.0);
    while p < ci.len() && q < cj.len() {
        match ci[p].cmp(&cj[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += vi[p] * vj[q] * w[ci[p]];
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

/// Diagonal scalings `Â = D A E`, `b̂ = σ_b D b`, `ĉ = σ_c E c`.
struct Scaling {
    row: Vec<f64>,
    col: Vec<f64>,
    sigma_b: f64,
    sigma_c: f64,
}

const RUIZ_PASSES: usize = 15;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

fn equilibrate(p: &ConicProblem, settings: &SolverSettings) -> (SparseMatrix, Vec<f64>, Vec<f64>, Scaling) {
    let (m, n) = (p.num_rows(), p.num_vars());
    let mut a = p.a.clone();
    let mut row = vec![1.0; m];
    let mut col = vec![1.0; n];
    if settings.scaling {
        for _ in 0..RUIZ_PASSES {
            let mut rn = vec![0.0_f64; m];
            let mut cn = vec![0.0_f64; n];
            for (r, c, v) in a.triplets() {
                rn[r] = rn[r].max(v.abs());
                cn[c] = cn[c].max(v.abs());
            }
            // blocks coupled by a cone share one row scale
            for (cone, range) in p.cones.ranges() {
                if matches!(cone, Cone::SecondOrder(_) | Cone::Psd(_)) {
                    let mean = rn[range.clone()].iter().sum::<f64>() / range.len() as f64;
                    rn[range].fill(mean);
                }
            }
            let dr: Vec<f64> = rn
                .iter()
                .zip(&row)
                .map(|(&x, &cur)| {
                    let f = if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 };
                    (cur * f).clamp(SCALE_MIN, SCALE_MAX) / cur
                })
                .collect();
            let dc: Vec<f64> = cn
                .iter()
                .zip(&col)
                .map(|(&x, &cur)| {
                    let f = if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 };
                    (cur * f).clamp(SCALE_MIN, SCALE_MAX) / cur
                })
                .collect();
            for r in 0..m {
                let span = a.row_ptr[r]..a.row_ptr[r + 1];
                for k in span {
                    a.values[k] *= dr[r] * dc[a.col_idx[k]];
                }
                row[r] *= dr[r];
            }
            for (c, d) in col.iter_mut().zip(&dc) {
                *c *= d;
            }
        }
    }
    let mut b: Vec<f64> = p.b.iter().zip(&row).map(|(b, d)| b * d).collect();
    let mut c: Vec<f64> = p.c.iter().zip(&col).map(|(c, e)| c * e).collect();
    let (sigma_b, sigma_c) = if settings.scaling {
        let mean_row = (0..m).map(|r| norm2(a.row(r).1)).sum::<f64>() / m as f64;
        let mut col_sq = vec![0.0; n];
        for (_, j, v) in a.triplets() {
            col_sq[j] += v * v;
        }
        let mean_col = col_sq.iter().map(|s| s.sqrt()).sum::<f64>() / n as f64;
        (
            settings.penalty * mean_row / norm2(&b).max(SCALE_MIN),
            settings.penalty * mean_col / norm2(&c).max(SCALE_MIN),
        )
    } else {
        (settings.penalty, settings.penalty)
    };
    b.iter_mut().for_each(|v| *v *= sigma_b);
    c.iter_mut().for_each(|v| *v *= sigma_c);
    (
        a,
        b,
        c,
        Scaling {
            row,
            col,
            sigma_b,
            sigma_c,
        },
    )
}

impl Scaling {
    fn unscale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.col).map(|(x, e)| x * e / self.sigma_b).collect()
    }

    fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.row).map(|(y, d)| y * d / self.sigma_c).collect()
    }

    fn unscale_s(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.row).map(|(s, d)| s / (d * self.sigma_b)).collect()
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    pobj: f64,
    dobj: f64,
    gap: f64,
}

fn residuals(p: &ConicProblem, x: &[f64], y: &[f64], s: &[f64]) -> Residuals {
    let ax = p.a.mul_vec(x);
    let pr: Vec<f64> = ax.iter().zip(s).zip(&p.b).map(|((a, s), b)| a + s - b).collect();
    let aty = p.a.mul_t_vec(y);
    let dr: Vec<f64> = aty.iter().zip(&p.c).map(|(a, c)| a + c).collect();
    let pobj = dot(&p.c, x);
    let dobj = -dot(&p.b, y);
    Residuals {
        primal: norm2(&pr),
        dual: norm2(&dr),
        pobj,
        dobj,
        gap: (pobj - dobj).abs(),
    }
}

/// Solves the cone program. Deterministic for identical inputs and settings.
pub fn solve(p: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
    p.validate()?;
    settings.validate()?;
    let (m, n) = (p.num_rows(), p.num_vars());
    let (a, b, c, scaling) = equilibrate(p, settings);
    let normal = NormalSolver::new(&a)?;

    let solve_m = |rx: &mut Vec<f64>, ry: &mut Vec<f64>| {
        // [[I, Âᵀ], [−Â, I]] (x, y) = (rx, ry)
        let aty = a.mul_t_vec(ry);
        for (x, v) in rx.iter_mut().zip(&aty) {
            *x -= v;
        }
        normal.solve(&a, rx);
        let ax = a.mul_vec(rx);
        for (y, v) in ry.iter_mut().zip(&ax) {
            *y += v;
        }
    };
    let (mut gx, mut gy) = (c.clone(), b.clone());
    solve_m(&mut gx, &mut gy);
    let h_dot_g = dot(&c, &gx) + dot(&b, &gy);

    let norm_b = norm2(&p.b);
    let norm_c = norm2(&p.c);
    let eps = settings.eps;
    let alpha = settings.over_relaxation;
    let infeas_start = 500.max(settings.max_iter / 20);

    // u = (x, y, τ), v = (0, s, κ)
    let mut ux = vec![0.0; n];
    let mut uy = vec![0.0; m];
    let mut tau = 1.0;
    let mut vs = vec![0.0; m];
    let mut kappa = 1.0;
    let mut zx = vec![0.0; n];
    let mut zy = vec![0.0; m];

    let mut iter = 0;
    let mut status = Status::MaxIters;
    while iter < settings.max_iter {
        iter += 1;
        // ũ = (I + Q)⁻¹ (u + v)
        zx.copy_from_slice(&ux);
        for ((z, u), v) in zy.iter_mut().zip(&uy).zip(&vs) {
            *z = u + v;
        }
        let wt = tau + kappa;
        solve_m(&mut zx, &mut zy);
        let t_tilde = (wt + dot(&c, &zx) + dot(&b, &zy)) / (1.0 + h_dot_g);
        for (z, g) in zx.iter_mut().zip(&gx) {
            *z -= t_tilde * g;
        }
        for (z, g) in zy.iter_mut().zip(&gy) {
            *z -= t_tilde * g;
        }
        // over-relaxation
        for (z, u) in zx.iter_mut().zip(&ux) {
            *z = alpha * *z + (1.0 - alpha) * u;
        }
        for (z, u) in zy.iter_mut().zip(&uy) {
            *z = alpha * *z + (1.0 - alpha) * u;
        }
        let t_rel = alpha * t_tilde + (1.0 - alpha) * tau;

        // u⁺ = Π(ũ − v),  v⁺ = v − ũ + u⁺
        ux.copy_from_slice(&zx);
        for (z, v) in zy.iter_mut().zip(&vs) {
            *z -= v;
        }
        uy.copy_from_slice(&zy);
        project_in_place(&mut uy, &p.cones, true)?;
        for ((v, z), u) in vs.iter_mut().zip(&zy).zip(&uy) {
            *v = u - z;
        }
        let tau_new = (t_rel - kappa).max(0.0);
        kappa += tau_new - t_rel;
        tau = tau_new;

        if iter % CHECK_INTERVAL != 0 && iter != settings.max_iter {
            continue;
        }
        if tau > 0.0 {
            let x = scaling.unscale_x(&ux.iter().map(|v| v / tau).collect::<Vec<_>>());
            let y = scaling.unscale_y(&uy.iter().map(|v| v / tau).collect::<Vec<_>>());
            let s = scaling.unscale_s(&vs.iter().map(|v| v / tau).collect::<Vec<_>>());
            let r = residuals(p, &x, &y, &s);
            if r.primal <= eps * (1.0 + norm_b)
                && r.dual <= eps * (1.0 + norm_c)
                && r.gap <= eps * (1.0 + r.pobj.abs() + r.dobj.abs())
            {
                status = Status::Solved;
                break;
            }
        }
        if iter >= infeas_start {
            if let Some(st) = infeasibility(p, &scaling, &ux, &uy, &vs, eps) {
                status = st;
                break;
            }
        }
    }

    let denom = if tau > 0.0 { tau } else { 1.0 };
    let x = scaling.unscale_x(&ux.iter().map(|v| v / denom).collect::<Vec<_>>());
    let y = scaling.unscale_y(&uy.iter().map(|v| v / denom).collect::<Vec<_>>());
    let s = scaling.unscale_s(&vs.iter().map(|v| v / denom).collect::<Vec<_>>());
    let r = residuals(p, &x, &y, &s);
    let (pobj, dobj) = match status {
        Status::PrimalInfeasible => (f64::INFINITY, f64::INFINITY),
        Status::DualInfeasible => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        _ => (r.pobj, r.dobj),
    };
    Ok(ConicSolution {
        status,
        x,
        y,
        s,
        primal_objective: pobj,
        dual_objective: dobj,
        primal_residual: r.primal,
        dual_residual: r.dual,
        gap: r.gap,
        iterations: iter,
    })
}

fn infeasibility(
    p: &ConicProblem,
    scaling: &Scaling,
    ux: &[f64],
    uy: &[f64],
    vs: &[f64],
    eps: f64,
) -> Option<Status> {
    let y = scaling.unscale_y(uy);
    let by = dot(&p.b, &y);
    if by < 0.0 {
        let aty = p.a.mul_t_vec(&y);
        if norm2(&aty) <= eps * (-by) {
            return Some(Status::PrimalInfeasible);
        }
    }
    let x = scaling.unscale_x(ux);
    let cx = dot(&p.c, &x);
    if cx < 0.0 {
        let s = scaling.unscale_s(vs);
        let ax = p.a.mul_vec(&x);
        let r: Vec<f64> = ax.iter().zip(&s).map(|(a, s)| a + s).collect();
        if norm2(&r) <= eps * (-cx) {
            return Some(Status::DualInfeasible);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> SolverSettings {
        SolverSettings {
            eps: 1e-8,
            ..Default::default()
        }
    }

    #[test]
    fn project_examples() {
        let nn = ConeSpec::new(vec![Cone::NonNeg(2)]).unwrap();
        assert_eq!(project_cone(&[-1.0, 2.0], &nn).unwrap(), vec![0.0, 2.0]);

        let q = ConeSpec::new(vec![Cone::SecondOrder(3)]).unwrap();
        let p = project_cone(&[0.0, 3.0, 4.0], &q).unwrap();
        for (a, b) in p.iter().zip(&[2.5, 1.5, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }

        let s = ConeSpec::new(vec![Cone::Psd(2)]).unwrap();
        let v = svec(&SymMatrix::from_diag(&[1.0, -1.0]));
        let p = project_cone(&v, &s).unwrap();
        let want = svec(&SymMatrix::from_diag(&[1.0, 0.0]));
        for (a, b) in p.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }

        let z = ConeSpec::new(vec![Cone::Zero(2)]).unwrap();
        assert_eq!(project_cone(&[3.0, -1.0], &z).unwrap(), vec![0.0, 0.0]);
        assert_eq!(project_dual_cone(&[3.0, -1.0], &z).unwrap(), vec![3.0, -1.0]);
        assert!(project_cone(&[1.0], &z).is_err());
    }

    #[test]
    fn cone_spec_rejects_degenerate_blocks() {
        assert!(ConeSpec::new(vec![Cone::SecondOrder(1)]).is_err());
        assert!(ConeSpec::new(vec![Cone::NonNeg(0)]).is_err());
        assert!(ConeSpec::new(vec![Cone::Psd(0)]).is_err());
    }

    #[test]
    fn rejects_zero_row_and_bad_dims() {
        let a = SparseMatrix::from_triplets(2, 1, vec![(0, 0, 1.0)]).unwrap();
        let cones = ConeSpec::new(vec![Cone::NonNeg(2)]).unwrap();
        assert!(ConicProblem::new(a.clone(), vec![0.0, 0.0], vec![1.0], cones.clone()).is_err());
        let a = SparseMatrix::from_triplets(1, 1, vec![(0, 0, 1.0)]).unwrap();
        assert!(ConicProblem::new(a, vec![0.0], vec![1.0], cones).is_err());
    }

    #[test]
    fn simple_lp() {
        // min x s.t. x >= 1   <=>   -x + s = -1, s >= 0
        let a = SparseMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap();
        let p = ConicProblem::new(a, vec![-1.0], vec![1.0], ConeSpec::new(vec![Cone::NonNeg(1)]).unwrap()).unwrap();
        let sol = solve(&p, &tight()).unwrap();
        assert_eq!(sol.status, Status::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.primal_objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_with_forced_entry() {
        // min Tr(B), B ⪰ 0 (1x1), B11 >= 4
        let a = SparseMatrix::from_triplets(2, 1, vec![(0, 0, -1.0), (1, 0, -1.0)]).unwrap();
        let cones = ConeSpec::new(vec![Cone::Psd(1), Cone::NonNeg(1)]).unwrap();
        let p = ConicProblem::new(a, vec![0.0, -4.0], vec![1.0], cones).unwrap();
        let sol = solve(&p, &tight()).unwrap();
        assert_eq!(sol.status, Status::Solved);
        assert!((sol.primal_objective - 4.0).abs() < 1e-6);
    }

    #[test]
    fn small_sdp_with_known_optimum() {
        // min Tr(X) s.t. X ⪰ 0 (2x2), X12 = 1  →  X = [[1,1],[1,1]], optimum 2
        let cones = ConeSpec::new(vec![Cone::Zero(1), Cone::Psd(2)]).unwrap();
        // svec order: X11, √2 X21, X22
        let trip = vec![
            (0, 1, 1.0 / std::f64::consts::SQRT_2),
            (1, 0, -1.0),
            (2, 1, -1.0),
            (3, 2, -1.0),
        ];
        let a = SparseMatrix::from_triplets(4, 3, trip).unwrap();
        let p = ConicProblem::new(a, vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0], cones).unwrap();
        let sol = solve(&p, &tight()).unwrap();
        assert_eq!(sol.status, Status::Solved);
        assert!((sol.primal_objective - 2.0).abs() < 1e-6, "{}", sol.primal_objective);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= -1
        let a = SparseMatrix::from_triplets(2, 1, vec![(0, 0, -1.0), (1, 0, 1.0)]).unwrap();
        let p = ConicProblem::new(a, vec![-1.0, -1.0], vec![1.0], ConeSpec::new(vec![Cone::NonNeg(2)]).unwrap()).unwrap();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible);
    }

    #[test]
    fn detects_dual_infeasibility() {
        // min -x s.t. x >= 0 is unbounded
        let a = SparseMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap();
        let p = ConicProblem::new(a, vec![0.0], vec![-1.0], ConeSpec::new(vec![Cone::NonNeg(1)]).unwrap()).unwrap();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::DualInfeasible);
    }

    #[test]
    fn max_iters_reports_residuals() {
        let a = SparseMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap();
        let p = ConicProblem::new(a, vec![-1.0], vec![1.0], ConeSpec::new(vec![Cone::NonNeg(1)]).unwrap()).unwrap();
        let settings = SolverSettings {
            max_iter: 3,
            eps: 1e-14,
            ..Default::default()
        };
        let sol = solve(&p, &settings).unwrap();
        assert_eq!(sol.status, Status::MaxIters);
        assert_eq!(sol.iterations, 3);
        assert!(sol.primal_residual.is_finite());
    }

    #[test]
    fn dump_round_trip() {
        let cones = ConeSpec::new(vec![Cone::Zero(1), Cone::Psd(2)]).unwrap();
        let trip = vec![(0, 1, std::f64::consts::FRAC_1_SQRT_2), (1, 0, -1.0), (2, 1, -1.0), (3, 2, -1.0)];
        let a = SparseMatrix::from_triplets(4, 3, trip).unwrap();
        let p = ConicProblem::new(a, vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0], cones).unwrap();
        let mut buf = Vec::new();
        p.write_dump(&mut buf).unwrap();
        let q = ConicProblem::read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(q.a, p.a);
        assert_eq!(q.b, p.b);
        assert_eq!(q.c, p.c);
        assert_eq!(q.cones, p.cones);
    }

    #[test]
    fn deterministic() {
        let cones = ConeSpec::new(vec![Cone::Zero(1), Cone::Psd(2)]).unwrap();
        let trip = vec![(0, 1, std::f64::consts::FRAC_1_SQRT_2), (1, 0, -1.0), (2, 1, -1.0), (3, 2, -1.0)];
        let a = SparseMatrix::from_triplets(4, 3, trip).unwrap();
        let p = ConicProblem::new(a, vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0], cones).unwrap();
        let s1 = solve(&p, &SolverSettings::default()).unwrap();
        let s2 = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s1.x, s2.x);
        assert_eq!(s1.iterations, s2.iterations);
    }

    fn random_block(cone: Cone, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..cone.dim()).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    proptest::proptest! {
        #[test]
        fn projection_is_idempotent_and_obtuse(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for cone in [Cone::NonNeg(4), Cone::SecondOrder(5), Cone::Psd(4), Cone::Zero(2)] {
                let spec = ConeSpec::new(vec![cone]).unwrap();
                let v = random_block(cone, &mut rng);
                let p = project_cone(&v, &spec).unwrap();
                let pp = project_cone(&p, &spec).unwrap();
                for (a, b) in p.iter().zip(&pp) {
                    proptest::prop_assert!((a - b).abs() <= 1e-10);
                }
                let diff: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a - b).collect();
                proptest::prop_assert!(dot(&diff, &p).abs() <= 1e-10);
            }
        }
    }
}
