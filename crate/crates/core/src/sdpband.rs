//! Prediction bands from the variance-interpolation semi-definite program.
//!
//! Given training pairs `(x_i, y_i)`, the variance is modelled as
//! `v̂(x) = ⟨k_x, B k_x⟩` with `B ⪰ 0`, where `k_x` is the cross-kernel vector
//! of the variance kernel. Among all such functions that cover every squared
//! training residual, the fit picks the one with minimum `Tr(K B)`:
//!
//! ```text
//! minimize    γ·⟨α, K^m α⟩ + Tr(K^v B)
//! subject to  ⟨k_i^v, B k_i^v⟩ ≥ (y_i − ⟨k_i^m, α⟩)²,   B ⪰ 0
//! ```
//!
//! [`BandMode`] selects the variant: a fixed user mean `m0` (no `α`), the
//! simultaneous mean/variance program above, the absolute-deviation variant
//! (`⟨k_i, B k_i⟩ ≥ |r_i|`), or phase retrieval (equality `⟨k_i, B k_i⟩ = y_i²`,
//! no mean).
//!
//! # Conic form
//!
//! [`build`] emits the program over `svec(B)` (PSD block of side `n`), the
//! per-datum slacks `t_i = ⟨k_i, B k_i⟩`, `α`, and an epigraph scalar
//! `u ≥ γ‖Lᵀα‖²` with `L Lᵀ = K^m + jitter·I`. Each `r_i² ≤ t_i` is the cone
//! `‖(2 r_i, t_i − 1)‖ ≤ t_i + 1`.
//!
//! [`fit`] by default solves the same program restricted to the numerical
//! range of `K^v`: with `K^v ≈ U Σ Uᵀ` over eigenvalues above
//! [`RANGE_TOL`]`·λ_max`, it optimizes `C ⪰ 0` of side `rank(K^v)` and maps back
//! via `B = U Σ^{-1/2} C Σ^{-1/2} Uᵀ`. For finite-rank kernels the two forms
//! have the same optimum.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::conic::{self, Cone, ConeSpec, ConicProblem, ConicSolution, SolverSettings, SparseMatrix, Status};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{cross, gram, CovariateSet, KernelSpec};
use crate::linalg::{
    cholesky, default_jitter, dot, lu_solve, norm_inf, packed_len, smat, svec, svec_outer,
    sym_eig, SymMatrix,
};

/// Relative eigenvalue cutoff defining the numerical range of `K^v`.
pub const RANGE_TOL: f64 = 1e-9;

/// A user-supplied conditional mean, evaluable at any covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction {
    Zero,
    Constant { value: f64 },
    /// `intercept + ⟨weights, x⟩`
    Affine { intercept: f64, weights: Vec<f64> },
}

impl MeanFunction {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            MeanFunction::Zero => Ok(0.0),
            MeanFunction::Constant { value } => Ok(*value),
            MeanFunction::Affine { intercept, weights } => {
                check_dim(weights.len(), x.len())?;
                Ok(intercept + dot(weights, x))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BandMode {
    FixedMean { m0: MeanFunction },
    Simultaneous { gamma: f64 },
    SvrVariant { gamma: f64 },
    PhaseRetrieval,
}

impl BandMode {
    pub fn gamma(&self) -> f64 {
        match self {
            BandMode::Simultaneous { gamma } | BandMode::SvrVariant { gamma } => *gamma,
            _ => 0.0,
        }
    }

    fn learns_mean(&self) -> bool {
        matches!(self, BandMode::Simultaneous { .. } | BandMode::SvrVariant { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProblemSpec {
    pub mode: BandMode,
    pub mean_kernel: Option<KernelSpec>,
    pub var_kernel: KernelSpec,
}

impl BandProblemSpec {
    pub fn fixed_mean(m0: MeanFunction, var_kernel: KernelSpec) -> Self {
        Self {
            mode: BandMode::FixedMean { m0 },
            mean_kernel: None,
            var_kernel,
        }
    }

    pub fn simultaneous(gamma: f64, mean_kernel: KernelSpec, var_kernel: KernelSpec) -> Self {
        Self {
            mode: BandMode::Simultaneous { gamma },
            mean_kernel: Some(mean_kernel),
            var_kernel,
        }
    }

    pub fn svr(gamma: f64, mean_kernel: KernelSpec, var_kernel: KernelSpec) -> Self {
        Self {
            mode: BandMode::SvrVariant { gamma },
            mean_kernel: Some(mean_kernel),
            var_kernel,
        }
    }

    pub fn phase_retrieval(var_kernel: KernelSpec) -> Self {
        Self {
            mode: BandMode::PhaseRetrieval,
            mean_kernel: None,
            var_kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.var_kernel.validate()?;
        let gamma = self.mode.gamma();
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        match (self.mode.learns_mean(), &self.mean_kernel) {
            (true, None) => Err(Error::InvalidArgument("this mode needs a mean kernel".into())),
            (true, Some(k)) => k.validate(),
            (false, Some(_)) => Err(Error::InvalidArgument(
                "fixed-mean and phase-retrieval modes take no mean kernel".into(),
            )),
            (false, None) => Ok(()),
        }
    }
}

/// A closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::InvalidArgument(format!("interval [{lower}, {upper}] is reversed")));
        }
        Ok(Self { lower, upper })
    }

    /// `center ± half_width`, with `half_width ≥ 0`.
    pub fn centered(center: f64, half_width: f64) -> Self {
        Self {
            lower: center - half_width,
            upper: center + half_width,
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Band at a point with known mean and variance; `delta ≥ −1`.
pub fn band_from_moments(mean: f64, variance: f64, delta: f64) -> PredictionInterval {
    let half = ((1.0 + delta).max(0.0) * variance.max(0.0)).sqrt();
    PredictionInterval::centered(mean, half)
}

/// How the variance block is parameterized: `⟨k_i, B k_i⟩ = ⟨w_i, C w_i⟩`
/// with `w_i` the rows of `features`, objective `Tr(objective · C)`.
struct VarianceBasis {
    /// `n × r`, row-major.
    features: Vec<f64>,
    rank: usize,
    objective: SymMatrix,
    /// `n × r` map `C ↦ B = V C Vᵀ`; `None` means `B = C`.
    back: Option<Vec<f64>>,
}

impl VarianceBasis {
    fn full(kv: &SymMatrix) -> Self {
        Self {
            features: kv.to_dense(),
            rank: kv.side(),
            objective: kv.clone(),
            back: None,
        }
    }

    fn range(kv: &SymMatrix) -> Result<Self> {
        let n = kv.side();
        let eig = sym_eig(kv, 1e-10)?;
        let top = eig.values[0];
        if !(top > 0.0) {
            return Err(Error::InvalidArgument("variance Gram matrix is zero".into()));
        }
        let rank = eig.values.iter().take_while(|&&l| l > RANGE_TOL * top).count();
        let mut features = vec![0.0; n * rank];
        let mut back = vec![0.0; n * rank];
        for j in 0..rank {
            let (q, l) = (eig.vector(j), eig.values[j]);
            let (sq, isq) = (l.sqrt(), 1.0 / l.sqrt());
            for i in 0..n {
                features[i * rank + j] = q[i] * sq;
                back[i * rank + j] = q[i] * isq;
            }
        }
        Ok(Self {
            features,
            rank,
            objective: SymMatrix::identity(rank),
            back: Some(back),
        })
    }

    fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.rank..(i + 1) * self.rank]
    }

    fn to_b(&self, c: &SymMatrix) -> SymMatrix {
        match &self.back {
            None => c.clone(),
            Some(v) => {
                let r = self.rank;
                let n = v.len() / r;
                // V C Vᵀ
                let cd = c.to_dense();
                let mut vc = vec![0.0; n * r];
                for i in 0..n {
                    for k in 0..r {
                        let vik = v[i * r + k];
                        if vik == 0.0 {
                            continue;
                        }
                        for j in 0..r {
                            vc[i * r + j] += vik * cd[k * r + j];
                        }
                    }
                }
                SymMatrix::from_fn(n, |i, j| dot(&vc[i * r..(i + 1) * r], &v[j * r..(j + 1) * r]))
            }
        }
    }
}

/// Where the mean coefficients live in a built program.
#[derive(Debug, Clone)]
struct MeanLayout {
    col: usize,
    len: usize,
    /// `n × len` map from the solved coordinates to `α`; `None` means identity.
    back: Option<Vec<f64>>,
    gram: SymMatrix,
}

impl MeanLayout {
    fn alpha(&self, x: &[f64], n: usize) -> Vec<f64> {
        let v = &x[self.col..self.col + self.len];
        match &self.back {
            None => v.to_vec(),
            Some(_) if self.len == 0 => vec![0.0; n],
            Some(m) => m.chunks(self.len).map(|row| dot(row, v)).collect(),
        }
    }
}

struct Built {
    problem: ConicProblem,
    n: usize,
    rank: usize,
    psd_rows: usize,
    mean: Option<MeanLayout>,
    /// Per datum, the rows whose duals sum to the multiplier of its residual
    /// constraint (empty when the constraint does not involve the mean).
    multiplier_rows: Vec<Vec<usize>>,
}

#[derive(Default)]
struct Rows {
    trip: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl Rows {
    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        let row = self.b.len();
        self.trip
            .extend(entries.into_iter().filter(|e| e.1 != 0.0).map(|(col, v)| (row, col, v)));
        self.b.push(rhs);
        row
    }

    fn finish(self, c: Vec<f64>) -> Result<ConicProblem> {
        let a = SparseMatrix::from_triplets(self.b.len(), c.len(), self.trip)?;
        ConicProblem::new(a, self.b, c, ConeSpec::new(self.cones)?)
    }
}

fn check_data(xs: &CovariateSet, ys: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    check_dim(xs.len(), ys.len())?;
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite response".into()));
    }
    Ok(())
}

/// Builds the conic program with one PSD block of side `n` on `svec(B)`.
pub fn build(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64]) -> Result<ConicProblem> {
    spec.validate()?;
    check_data(xs, ys)?;
    let kv = gram(&spec.var_kernel, xs);
    Ok(assemble(spec, xs, ys, &VarianceBasis::full(&kv))?.problem)
}

/// Builds the range-space program used by [`fit`]; returns it together with
/// the side of its PSD block.
pub fn build_reduced(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64]) -> Result<(ConicProblem, usize)> {
    spec.validate()?;
    check_data(xs, ys)?;
    let kv = gram(&spec.var_kernel, xs);
    let basis = VarianceBasis::range(&kv)?;
    let rank = basis.rank;
    Ok((assemble_reduced(spec, xs, ys, &basis)?.problem, rank))
}

fn zero_rows(km: &SymMatrix) -> Vec<bool> {
    let n = km.side();
    (0..n).map(|i| (0..n).all(|j| km.get(i, j) == 0.0)).collect()
}

/// Rows shared by both forms when the mean is fixed or absent.
fn push_mean_free(
    spec: &BandProblemSpec,
    xs: &CovariateSet,
    ys: &[f64],
    g: &[Vec<f64>],
    rows: &mut Rows,
) -> Result<()> {
    let n = ys.len();
    match &spec.mode {
        BandMode::FixedMean { m0 } => {
            // ⟨g_i, svec B⟩ ≥ e_i²
            for (i, gi) in g.iter().enumerate() {
                let e = ys[i] - m0.eval(xs.row(i))?;
                rows.push(gi.iter().enumerate().map(|(k, &v)| (k, -v)), -e * e);
            }
            rows.cones.push(Cone::NonNeg(n));
        }
        BandMode::PhaseRetrieval => {
            for (i, gi) in g.iter().enumerate() {
                rows.push(gi.iter().enumerate().map(|(k, &v)| (k, v)), ys[i] * ys[i]);
            }
            rows.cones.push(Cone::Zero(n));
        }
        _ => unreachable!("mean-learning modes are assembled separately"),
    }
    Ok(())
}

/// Contract form: `svec(B)`, `t`, `α`, `u`, Cholesky epigraph.
fn assemble(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64], basis: &VarianceBasis) -> Result<Built> {
    let n = xs.len();
    let p = packed_len(basis.rank);
    let g: Vec<Vec<f64>> = (0..n).map(|i| svec_outer(basis.feature(i))).collect();
    let gamma = spec.mode.gamma();
    let mut rows = Rows::default();
    let mut c = svec(&basis.objective);
    let mut mean = None;
    let mut multiplier_rows = vec![Vec::new(); n];

    if spec.mode.learns_mean() {
        let km = gram(&spec.mean_kernel.expect("validated"), xs);
        let (t0, a0) = (p, p + n);
        c.extend(std::iter::repeat(0.0).take(2 * n));
        let u_col = (gamma > 0.0).then(|| {
            c.push(1.0);
            a0 + n
        });

        // t_i − ⟨g_i, svec B⟩ = 0
        for (i, gi) in g.iter().enumerate() {
            let e = gi.iter().enumerate().map(|(k, &v)| (k, -v)).chain([(t0 + i, 1.0)]);
            multiplier_rows[i].push(rows.push(e, 0.0));
        }
        rows.cones.push(Cone::Zero(n));

        let kmr = &km;
        let km_row = |i: usize, f: f64| (0..n).map(move |j| (a0 + j, f * kmr.get(i, j)));
        push_residual_rows(&spec.mode, ys, &zero_rows(&km), &mut rows, |i| t0 + i, km_row, |_, _| {});
        if let Some(u) = u_col {
            // (1 + u, 2√γ Lᵀα, u − 1) ∈ SOC
            let chol = cholesky(&km, default_jitter(&km))?;
            let f = 2.0 * gamma.sqrt();
            rows.push([(u, -1.0)], 1.0);
            for j in 0..n {
                rows.push((j..n).map(|i| (a0 + i, -f * chol.get(i, j))), 0.0);
            }
            rows.push([(u, -1.0)], -1.0);
            rows.cones.push(Cone::SecondOrder(n + 2));
        }
        mean = Some(MeanLayout {
            col: a0,
            len: n,
            back: None,
            gram: km,
        });
    } else {
        push_mean_free(spec, xs, ys, &g, &mut rows)?;
    }

    // svec B ∈ PSD
    let psd_rows = rows.b.len();
    for k in 0..p {
        rows.push([(k, -1.0)], 0.0);
    }
    rows.cones.push(Cone::Psd(basis.rank));
    Ok(Built {
        problem: rows.finish(c)?,
        n,
        rank: basis.rank,
        psd_rows,
        mean,
        multiplier_rows,
    })
}

/// Residual constraints `r_i² ≤ t_i` (or `|r_i| ≤ t_i`) with
/// `r_i = y_i − ⟨mean_row(i), x⟩`. `t(i)` is a single column holding `t_i`
/// (contract form) and `t_entries` lets the reduced form expand `t_i` into
/// `⟨g_i, svec C⟩` instead. `on_soc(i, rows)` receives the rows of datum `i`'s
/// cone.
fn push_residual_rows<T, M, I>(
    mode: &BandMode,
    ys: &[f64],
    degenerate: &[bool],
    rows: &mut Rows,
    t: T,
    mean_row: M,
    mut on_soc: impl FnMut(usize, [usize; 2]),
) where
    T: Fn(usize) -> usize,
    M: Fn(usize, f64) -> I,
    I: Iterator<Item = (usize, f64)>,
{
    push_residual_rows_with(mode, ys, degenerate, rows, |i, f| vec![(t(i), f)], mean_row, &mut on_soc)
}

fn push_residual_rows_with<M, I>(
    mode: &BandMode,
    ys: &[f64],
    degenerate: &[bool],
    rows: &mut Rows,
    t_entries: impl Fn(usize, f64) -> Vec<(usize, f64)>,
    mean_row: M,
    on_soc: &mut impl FnMut(usize, [usize; 2]),
) where
    M: Fn(usize, f64) -> I,
    I: Iterator<Item = (usize, f64)>,
{
    let n = ys.len();
    let svr = matches!(mode, BandMode::SvrVariant { .. });
    // data with an all-zero mean row have the constant residual y_i
    let mut linear = 0;
    for i in 0..n {
        if degenerate[i] {
            let need = if svr { ys[i].abs() } else { ys[i] * ys[i] };
            rows.push(t_entries(i, -1.0), -need);
            linear += 1;
        } else if svr {
            // t_i + ⟨k_i, α⟩ − y_i ≥ 0  and  t_i − ⟨k_i, α⟩ + y_i ≥ 0
            rows.push(mean_row(i, -1.0).chain(t_entries(i, -1.0)), -ys[i]);
            rows.push(mean_row(i, 1.0).chain(t_entries(i, -1.0)), ys[i]);
            linear += 2;
        }
    }
    if linear > 0 {
        rows.cones.push(Cone::NonNeg(linear));
    }
    if !svr {
        // (1 + t_i, 2 r_i, t_i − 1) ∈ SOC
        for i in (0..n).filter(|&i| !degenerate[i]) {
            let r0 = rows.push(t_entries(i, -1.0), 1.0);
            rows.push(mean_row(i, 2.0), 2.0 * ys[i]);
            let r2 = rows.push(t_entries(i, -1.0), -1.0);
            rows.cones.push(Cone::SecondOrder(3));
            on_soc(i, [r0, r2]);
        }
    }
}

/// Factor `K ≈ F Fᵀ` over eigenvalues above [`RANGE_TOL`]`·λ_max`; returns
/// `F` and `V` (both `n × r`, row-major) with `K V = F` on the range.
fn range_factor(k: &SymMatrix) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = k.side();
    let eig = sym_eig(k, 1e-10)?;
    let top = eig.values[0].max(0.0);
    let r = eig.values.iter().take_while(|&&l| l > RANGE_TOL * top).count();
    let mut f = vec![0.0; n * r];
    let mut v = vec![0.0; n * r];
    for j in 0..r {
        let (q, l) = (eig.vector(j), eig.values[j]);
        for i in 0..n {
            f[i * r + j] = q[i] * l.sqrt();
            v[i * r + j] = q[i] / l.sqrt();
        }
    }
    Ok((f, v, r))
}

/// Range-space form used by [`fit`]: `svec(C)`, `β`, `u`, where
/// `⟨k_i, B k_i⟩ = ⟨w_i, C w_i⟩` and `K^m α = F β`, `⟨α, K^m α⟩ = ‖β‖²`.
fn assemble_reduced(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64], basis: &VarianceBasis) -> Result<Built> {
    let n = xs.len();
    let p = packed_len(basis.rank);
    let g: Vec<Vec<f64>> = (0..n).map(|i| svec_outer(basis.feature(i))).collect();
    let gamma = spec.mode.gamma();
    let mut rows = Rows::default();
    let mut c = svec(&basis.objective);
    let mut mean = None;
    let mut multiplier_rows = vec![Vec::new(); n];

    if spec.mode.learns_mean() {
        let km = gram(&spec.mean_kernel.expect("validated"), xs);
        let degenerate = zero_rows(&km);
        let (f, back, rm) = if degenerate.iter().all(|&d| d) {
            (Vec::new(), Vec::new(), 0)
        } else {
            range_factor(&km)?
        };
        let b0 = p;
        c.extend(std::iter::repeat(0.0).take(rm));
        let u_col = (gamma > 0.0 && rm > 0).then(|| {
            c.push(1.0);
            b0 + rm
        });
        let t_entries = |i: usize, s: f64| -> Vec<(usize, f64)> { g[i].iter().enumerate().map(|(k, &v)| (k, s * v)).collect() };
        let fr = &f;
        let mean_row = |i: usize, s: f64| (0..rm).map(move |j| (b0 + j, s * fr[i * rm + j]));
        let mut record = |i: usize, r: [usize; 2]| multiplier_rows[i].extend(r);
        push_residual_rows_with(&spec.mode, ys, &degenerate, &mut rows, t_entries, mean_row, &mut record);
        if let Some(u) = u_col {
            // (1 + u, 2√γ β, u − 1) ∈ SOC
            let s = 2.0 * gamma.sqrt();
            rows.push([(u, -1.0)], 1.0);
            for j in 0..rm {
                rows.push([(b0 + j, -s)], 0.0);
            }
            rows.push([(u, -1.0)], -1.0);
            rows.cones.push(Cone::SecondOrder(rm + 2));
        }
        mean = Some(MeanLayout {
            col: b0,
            len: rm,
            back: Some(back),
            gram: km,
        });
    } else {
        push_mean_free(spec, xs, ys, &g, &mut rows)?;
    }

    let psd_rows = rows.b.len();
    for k in 0..p {
        rows.push([(k, -1.0)], 0.0);
    }
    rows.cones.push(Cone::Psd(basis.rank));
    Ok(Built {
        problem: rows.finish(c)?,
        n,
        rank: basis.rank,
        psd_rows,
        mean,
        multiplier_rows,
    })
}

/// Objective of the always-feasible point `α = 0`,
/// `B = max_i ‖k_i‖⁻² e_i² · I`, where `e_i` is the residual against the fixed
/// mean (or `y_i` otherwise). `None` when some `k_i = 0` has a nonzero residual.
pub fn trivial_objective(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64]) -> Result<Option<f64>> {
    check_data(xs, ys)?;
    let kv = gram(&spec.var_kernel, xs);
    let n = xs.len();
    let mut scale = 0.0_f64;
    for i in 0..n {
        let e = match &spec.mode {
            BandMode::FixedMean { m0 } => ys[i] - m0.eval(xs.row(i))?,
            _ => ys[i],
        };
        let need = match spec.mode {
            BandMode::SvrVariant { .. } => e.abs(),
            _ => e * e,
        };
        let k2: f64 = (0..n).map(|j| kv.get(i, j).powi(2)).sum();
        if k2 == 0.0 {
            if need > 0.0 {
                return Ok(None);
            }
            continue;
        }
        scale = scale.max(need / k2);
    }
    Ok(Some(scale * kv.trace()))
}

/// Solver diagnostics carried by a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub status: Status,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Side of the PSD block that was solved.
    pub psd_side: usize,
    pub alpha_polished: bool,
    /// Objective increase from patching constraint violations left within
    /// the solver tolerance.
    pub variance_patch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Solve on the numerical range of `K^v` instead of the full side-`n` block.
    pub reduce: bool,
    /// Refine `α̂` from the stationarity condition after solving.
    pub polish: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            reduce: true,
            polish: true,
        }
    }
}

/// A fitted band.
#[derive(Debug, Serialize, Deserialize)]
pub struct BandModel {
    pub mode: BandMode,
    pub mean_kernel: Option<KernelSpec>,
    pub var_kernel: KernelSpec,
    pub gamma: f64,
    pub train_x: CovariateSet,
    pub alpha: Option<Vec<f64>>,
    pub b: SymMatrix,
    /// `Tr(K^v B̂)`.
    pub opt_n: f64,
    /// `γ·⟨α̂, K^m α̂⟩` (zero without a learned mean).
    pub mean_term: f64,
    pub diagnostics: FitDiagnostics,
    #[serde(skip)]
    clamp_events: AtomicUsize,
}

impl Clone for BandModel {
    fn clone(&self) -> Self {
        Self {
            mode: self.mode.clone(),
            mean_kernel: self.mean_kernel,
            var_kernel: self.var_kernel,
            gamma: self.gamma,
            train_x: self.train_x.clone(),
            alpha: self.alpha.clone(),
            b: self.b.clone(),
            opt_n: self.opt_n,
            mean_term: self.mean_term,
            diagnostics: self.diagnostics.clone(),
            clamp_events: AtomicUsize::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

pub fn fit(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64], settings: &SolverSettings) -> Result<BandModel> {
    fit_with(spec, xs, ys, settings, FitOptions::default())
}

pub fn fit_with(
    spec: &BandProblemSpec,
    xs: &CovariateSet,
    ys: &[f64],
    settings: &SolverSettings,
    options: FitOptions,
) -> Result<BandModel> {
    spec.validate()?;
    check_data(xs, ys)?;
    let kv = gram(&spec.var_kernel, xs);
    let (basis, built) = if options.reduce {
        let basis = VarianceBasis::range(&kv)?;
        let built = assemble_reduced(spec, xs, ys, &basis)?;
        (basis, built)
    } else {
        let basis = VarianceBasis::full(&kv);
        let built = assemble(spec, xs, ys, &basis)?;
        (basis, built)
    };
    let sol = conic::solve(&built.problem, settings)?;
    match sol.status {
        Status::Solved => {}
        Status::MaxIters => {
            return Err(Error::Solver(format!(
                "no convergence after {} iterations (primal residual {:e}, dual residual {:e}, gap {:e})",
                sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
            )))
        }
        st => {
            return Err(Error::Solver(format!(
                "internal error: solver reported {st}, but α = 0 with a scaled identity B is always feasible"
            )))
        }
    }
    let p = packed_len(built.rank);
    // the PSD slack is exactly in the cone
    let c_hat = smat(&sol.s[built.psd_rows..built.psd_rows + p])?;
    let mut alpha = built.mean.as_ref().map(|m| m.alpha(&sol.x, built.n));

    let mut polished = false;
    if let (true, BandMode::Simultaneous { gamma }, Some(a), Some(mean)) =
        (options.polish, &spec.mode, alpha.as_ref(), built.mean.as_ref())
    {
        if *gamma > 0.0 && mean.len > 0 {
            let lambda: Vec<f64> = built
                .multiplier_rows
                .iter()
                .map(|r| r.iter().map(|&k| sol.y[k]).sum())
                .collect();
            // primal value of the solver point once its variance is patched
            let primal = patch_cost(&spec.mode, ys, &mean.gram.mul_vec(a), &basis, &c_hat)
                .map(|p| gamma * mean.gram.quad_form(a) + c_hat.trace_inner(&basis.objective) + p);
            let tol = 1e-6 * (1.0 + sol.primal_objective.abs());
            let mut best: Option<(f64, Vec<f64>)> = None;
            let (mut lam, mut c_cur, mut fitted) = (lambda, c_hat.clone(), mean.gram.mul_vec(a));
            // multipliers of constraints outside the range of Ĉ are not identified;
            // patching Ĉ for the polished α brings them into range for the next round
            for round in 0..3 {
                let slack: Vec<f64> = (0..built.n)
                    .map(|i| c_cur.quad_form(basis.feature(i)) - (ys[i] - fitted[i]).powi(2))
                    .collect();
                let mut candidates: Vec<Vec<f64>> = [1e-6, 1e-9, 1e-12]
                    .iter()
                    .filter_map(|&cut| refine_multipliers(&basis, &c_cur, &slack, ys, &lam, cut))
                    .collect();
                if round == 0 {
                    candidates.push(lam.clone());
                }
                let mut improved = false;
                for l in candidates {
                    let Some((d, cand, l)) = dual_bound(*gamma, &mean.gram, &basis, ys, &l) else { continue };
                    if best.as_ref().is_none_or(|(b, _)| d > *b) {
                        (lam, fitted) = (l, mean.gram.mul_vec(&cand));
                        best = Some((d, cand));
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
                c_cur = c_hat.clone();
                patch_violations(&spec.mode, ys, &fitted, &basis, &mut c_cur);
            }
            // γ‖α* − α_λ‖²_K ≤ P − D(λ), so a small gap certifies the stationary point
            let better = match (primal, best) {
                (Some(p), Some((d, cand))) if p - d <= tol => {
                    let f = mean.gram.mul_vec(&cand);
                    patch_cost(&spec.mode, ys, &f, &basis, &c_hat).map(|_| cand)
                }
                _ => None,
            };
            if let Some(better) = better {
                alpha = Some(better);
                polished = true;
            }
        }
    }

    let mut c_hat = c_hat;
    let patch = match &spec.mode {
        BandMode::PhaseRetrieval => 0.0,
        mode => {
            let fitted: Vec<f64> = match (&alpha, &built.mean) {
                (Some(a), Some(m)) => m.gram.mul_vec(a),
                _ => (0..built.n).map(|i| fixed_mean_at(mode, xs.row(i))).collect::<Result<_>>()?,
            };
            patch_violations(mode, ys, &fitted, &basis, &mut c_hat)
        }
    };
    let b_hat = basis.to_b(&c_hat);
    let opt_n = c_hat.trace_inner(&basis.objective);
    let mean_term = match (&alpha, &built.mean) {
        (Some(a), Some(m)) => spec.mode.gamma() * m.gram.quad_form(a),
        _ => 0.0,
    };
    Ok(BandModel {
        mode: spec.mode.clone(),
        mean_kernel: spec.mean_kernel,
        var_kernel: spec.var_kernel,
        gamma: spec.mode.gamma(),
        train_x: xs.clone(),
        alpha,
        b: b_hat,
        opt_n,
        mean_term,
        diagnostics: FitDiagnostics {
            status: sol.status,
            iterations: sol.iterations,
            primal_objective: sol.primal_objective,
            dual_objective: sol.dual_objective,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            psd_side: built.rank,
            alpha_polished: polished,
            variance_patch: patch,
        },
        clamp_events: AtomicUsize::new(0),
    })
}

fn fixed_mean_at(mode: &BandMode, x: &[f64]) -> Result<f64> {
    match mode {
        BandMode::FixedMean { m0 } => m0.eval(x),
        _ => Ok(0.0),
    }
}

/// Largest violation, relative to `1 + y_i²`, that [`patch_violations`]
/// absorbs; anything larger is left for the caller to see.
const MAX_PATCH: f64 = 1e-3;

/// `(i, δ_i)` for every datum whose constraint `Ĉ` misses by `δ_i > 0`.
fn shortfalls(mode: &BandMode, ys: &[f64], fitted: &[f64], basis: &VarianceBasis, c_hat: &SymMatrix) -> Vec<(usize, f64)> {
    ys.iter()
        .zip(fitted)
        .enumerate()
        .filter_map(|(i, (y, f))| {
            let r = y - f;
            let need = match mode {
                BandMode::SvrVariant { .. } => r.abs(),
                _ => r * r,
            };
            let delta = need - c_hat.quad_form(basis.feature(i));
            (delta > 0.0).then_some((i, delta))
        })
        .collect()
}

fn patchable(i: usize, delta: f64, ys: &[f64], basis: &VarianceBasis) -> bool {
    let w = basis.feature(i);
    dot(w, w) > 0.0 && delta <= MAX_PATCH * (1.0 + ys[i] * ys[i])
}

/// Objective increase of the rank-one patches for `fitted`, or `None` when
/// some shortfall is too large to patch.
fn patch_cost(mode: &BandMode, ys: &[f64], fitted: &[f64], basis: &VarianceBasis, c_hat: &SymMatrix) -> Option<f64> {
    let mut cost = 0.0;
    for (i, delta) in shortfalls(mode, ys, fitted, basis, c_hat) {
        if !patchable(i, delta, ys, basis) {
            return None;
        }
        let w = basis.feature(i);
        let w2 = dot(w, w);
        cost += delta / (w2 * w2) * basis.objective.quad_form(w);
    }
    Some(cost)
}

/// Adds `δ_i w_i w_iᵀ / ‖w_i‖⁴` to `C` for every datum whose constraint is
/// violated by `δ_i`, which raises `⟨w_i, C w_i⟩` by exactly `δ_i` and
/// never lowers any other. Returns the objective increase.
fn patch_violations(
    mode: &BandMode,
    ys: &[f64],
    fitted: &[f64],
    basis: &VarianceBasis,
    c_hat: &mut SymMatrix,
) -> f64 {
    let mut added = 0.0;
    for (i, delta) in shortfalls(mode, ys, fitted, basis, c_hat) {
        if !patchable(i, delta, ys, basis) {
            log::warn!("training constraint {i} violated by {delta:e}; left unpatched");
            continue;
        }
        let w = basis.feature(i);
        let w2 = dot(w, w);
        let scale = delta / (w2 * w2);
        let side = w.len();
        for p in 0..side {
            for q in 0..=p {
                c_hat.set(p, q, c_hat.get(p, q) + scale * w[p] * w[q]);
            }
        }
        added += scale * basis.objective.quad_form(w);
    }
    added
}

/// Moves the solver's multipliers `λ⁰` to the nearest `λ` satisfying the
/// variance stationarity condition `(W − Σ λ_i w_i w_iᵀ) V = 0`, with `W` the
/// objective matrix and `V` spanning the range of `Ĉ`. Only constraints within
/// `tol` of activity take part; the others get `λ_i = 0`.
fn refine_multipliers(
    basis: &VarianceBasis,
    c_hat: &SymMatrix,
    slack: &[f64],
    ys: &[f64],
    lambda0: &[f64],
    cutoff: f64,
) -> Option<Vec<f64>> {
    let eig = sym_eig(c_hat, 1e-12).ok()?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return None;
    }
    let range: Vec<usize> = (0..eig.side()).filter(|&j| eig.values[j] > cutoff * top).collect();
    let active: Vec<usize> = (0..ys.len())
        .filter(|&i| slack[i] <= 1e-5 * (1.0 + ys[i] * ys[i]))
        .collect();
    if active.is_empty() {
        return None;
    }
    let r = basis.rank;
    // columns of M stacked over range vectors: M[(a, p), i] = w_i[p] (w_iᵀ v_a)
    let rows = r * range.len();
    let mut m = vec![0.0; rows * active.len()];
    let mut b = vec![0.0; rows];
    for (ai, &a) in range.iter().enumerate() {
        let v = eig.vector(a);
        let wv = basis.objective.mul_vec(v);
        b[ai * r..(ai + 1) * r].copy_from_slice(&wv);
        for (ci, &i) in active.iter().enumerate() {
            let w = basis.feature(i);
            let proj = dot(w, v);
            for p in 0..r {
                m[(ai * r + p) * active.len() + ci] = w[p] * proj;
            }
        }
    }
    let k = active.len();
    let l0: Vec<f64> = active.iter().map(|&i| lambda0[i]).collect();
    let mut e = b.clone();
    for row in 0..rows {
        e[row] -= (0..k).map(|c| m[row * k + c] * l0[c]).sum::<f64>();
    }
    // minimum-norm correction δ = (MᵀM)⁺ Mᵀ e
    let mtm = SymMatrix::from_fn(k, |i, j| (0..rows).map(|row| m[row * k + i] * m[row * k + j]).sum());
    let mte: Vec<f64> = (0..k).map(|c| (0..rows).map(|row| m[row * k + c] * e[row]).sum()).collect();
    let g = sym_eig(&mtm, 1e-12).ok()?;
    let gtop = g.values.first().copied().unwrap_or(0.0);
    if !(gtop > 0.0) {
        return None;
    }
    let mut delta = vec![0.0; k];
    for j in 0..k {
        let l = g.values[j];
        if l > 1e-12 * gtop {
            let u = g.vector(j);
            let c = dot(u, &mte) / l;
            for (d, ui) in delta.iter_mut().zip(u) {
                *d += c * ui;
            }
        }
    }
    let mut lambda = vec![0.0; ys.len()];
    for (c, &i) in active.iter().enumerate() {
        lambda[i] = (l0[c] + delta[c]).max(0.0);
    }
    lambda.iter().all(|l| l.is_finite()).then_some(lambda)
}

/// Solves `(γI + ΛK) α = Λ y`, the stationarity condition in `α` given the
/// constraint multipliers `Λ`.
fn stationary_alpha(gamma: f64, km: &SymMatrix, ys: &[f64], lambda: &[f64]) -> Option<Vec<f64>> {
    let n = ys.len();
    if lambda.iter().any(|l| !l.is_finite()) {
        return None;
    }
    let lam: Vec<f64> = lambda.iter().map(|l| l.max(0.0)).collect();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = lam[i] * km.get(i, j);
        }
        m[i * n + i] += gamma;
    }
    let rhs: Vec<f64> = lam.iter().zip(ys).map(|(l, y)| l * y).collect();
    let alpha = lu_solve(&m, &rhs).ok()?;
    norm_inf(&alpha).is_finite().then_some(alpha)
}

/// Lagrangian lower bound at multipliers `λ`, scaled down if needed so that
/// `W − Σ λ_i w_i w_iᵀ ⪰ 0`. Returns the bound, the minimizing `α` and the
/// multipliers used.
fn dual_bound(
    gamma: f64,
    km: &SymMatrix,
    basis: &VarianceBasis,
    ys: &[f64],
    lambda: &[f64],
) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let r = basis.rank;
    let mut m = SymMatrix::zeros(r);
    for (i, l) in lambda.iter().enumerate() {
        let (l, w) = (l.max(0.0), basis.feature(i));
        for p in 0..r {
            for q in 0..=p {
                m.set(p, q, m.get(p, q) + l * w[p] * w[q]);
            }
        }
    }
    // largest generalized eigenvalue of (M, W)
    let chol = cholesky(&basis.objective, 0.0).ok()?;
    let mut half = vec![0.0; r * r];
    for j in 0..r {
        let mut col: Vec<f64> = (0..r).map(|i| m.get(i, j)).collect();
        chol.solve_lower_in_place(&mut col);
        for i in 0..r {
            half[i * r + j] = col[i];
        }
    }
    let mut n = SymMatrix::zeros(r);
    for i in 0..r {
        let mut row = half[i * r..(i + 1) * r].to_vec();
        chol.solve_lower_in_place(&mut row);
        for j in 0..=i {
            n.set(i, j, row[j]);
        }
    }
    let mu = sym_eig(&n, 1e-12).ok()?.values.first().copied().unwrap_or(0.0);
    let scale = if mu > 1.0 { 1.0 / mu } else { 1.0 };
    let lam: Vec<f64> = lambda.iter().map(|l| l.max(0.0) * scale).collect();
    let alpha = stationary_alpha(gamma, km, ys, &lam)?;
    let fitted = km.mul_vec(&alpha);
    let d = gamma * km.quad_form(&alpha)
        + lam.iter().zip(ys.iter().zip(&fitted)).map(|(l, (y, f))| l * (y - f).powi(2)).sum::<f64>();
    d.is_finite().then_some((d, alpha, lam))
}

impl BandModel {
    /// Assembles a model from given coefficients, e.g. to evaluate a band
    /// computed elsewhere. `opt_n` and the mean term are recomputed.
    pub fn from_parts(
        spec: &BandProblemSpec,
        train_x: CovariateSet,
        alpha: Option<Vec<f64>>,
        b: SymMatrix,
    ) -> Result<Self> {
        spec.validate()?;
        check_dim(train_x.len(), b.side())?;
        let mean_gram = spec.mean_kernel.as_ref().map(|k| gram(k, &train_x));
        let mean_term = match (&alpha, &mean_gram) {
            (Some(a), Some(km)) => {
                check_dim(train_x.len(), a.len())?;
                spec.mode.gamma() * km.quad_form(a)
            }
            (None, None) => 0.0,
            _ => return Err(Error::InvalidArgument("alpha must be given exactly when the mode learns a mean".into())),
        };
        let opt_n = gram(&spec.var_kernel, &train_x).trace_inner(&b);
        let side = b.side();
        Ok(Self {
            mode: spec.mode.clone(),
            mean_kernel: spec.mean_kernel,
            var_kernel: spec.var_kernel,
            gamma: spec.mode.gamma(),
            train_x,
            alpha,
            b,
            opt_n,
            mean_term,
            diagnostics: FitDiagnostics {
                status: Status::Solved,
                iterations: 0,
                primal_objective: opt_n + mean_term,
                dual_objective: opt_n + mean_term,
                primal_residual: 0.0,
                dual_residual: 0.0,
                gap: 0.0,
                psd_side: side,
                alpha_polished: false,
                variance_patch: 0.0,
            },
            clamp_events: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.train_x.dim()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.len()
    }

    /// Number of variance evaluations that came out negative and were set to 0.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// `v̂(x) = ⟨k_x, B̂ k_x⟩`, clamped at zero.
    pub fn variance_at(&self, x: &[f64]) -> Result<f64> {
        let k = cross(&self.var_kernel, &self.train_x, x)?;
        let v = self.b.quad_form(&k);
        if v < 0.0 {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            log::debug!("clamped negative variance {v:e} to 0");
            return Ok(0.0);
        }
        Ok(v)
    }

    /// `m̂(x) = ⟨k_x^m, α̂⟩`, or `m0(x)` for a fixed mean, or `0` for phase
    /// retrieval.
    pub fn mean_at(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match (&self.mode, &self.alpha, &self.mean_kernel) {
            (BandMode::FixedMean { m0 }, _, _) => m0.eval(x),
            (_, Some(alpha), Some(k)) => Ok(dot(&cross(k, &self.train_x, x)?, alpha)),
            _ => Ok(0.0),
        }
    }

    pub fn moments_at(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok((self.mean_at(x)?, self.variance_at(x)?))
    }

    /// `[m̂(x) − √((1+δ)v̂(x)), m̂(x) + √((1+δ)v̂(x))]` for `δ > −1`.
    pub fn interval(&self, x: &[f64], delta: f64) -> Result<PredictionInterval> {
        if !(delta > -1.0) {
            return Err(Error::InvalidArgument(format!("delta must exceed -1, got {delta}")));
        }
        let (m, v) = self.moments_at(x)?;
        Ok(band_from_moments(m, v, delta))
    }

    /// Largest violation of `⟨k_i, B̂ k_i⟩ ≥ (y_i − m̂(x_i))²` relative to
    /// `1 + y_i²` (`≤ 0` when all constraints hold).
    pub fn max_training_violation(&self, ys: &[f64]) -> Result<f64> {
        check_dim(self.n_train(), ys.len())?;
        let mut worst = f64::NEG_INFINITY;
        for (x, &y) in self.train_x.rows().zip(ys) {
            let k = cross(&self.var_kernel, &self.train_x, x)?;
            let v = self.b.quad_form(&k);
            let r = y - self.mean_at(x)?;
            let need = match self.mode {
                BandMode::SvrVariant { .. } => r.abs(),
                _ => r * r,
            };
            worst = worst.max((need - v) / (1.0 + y * y));
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFileOwned = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a band model file (format '{}')", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", file.version)));
        }
        let m = file.model;
        if m.b.side() != m.train_x.len() {
            return Err(Error::Data("B̂ side does not match the training set".into()));
        }
        if let Some(a) = &m.alpha {
            check_dim(m.train_x.len(), a.len())?;
        }
        Ok(m)
    }
}

pub const MODEL_FORMAT: &str = "hetband-band-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelFile<'a> {
    format: String,
    version: u32,
    model: &'a BandModel,
}

#[derive(Deserialize)]
struct ModelFileOwned {
    format: String,
    version: u32,
    model: BandModel,
}

/// Exposes the dual multipliers of the `t_i` rows for inspection in tests.
#[doc(hidden)]
pub fn solve_raw(spec: &BandProblemSpec, xs: &CovariateSet, ys: &[f64], settings: &SolverSettings) -> Result<ConicSolution> {
    let (p, _) = build_reduced(spec, xs, ys)?;
    conic::solve(&p, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(b: SymMatrix, kernel: KernelSpec, xs: &[f64], alpha: Option<Vec<f64>>) -> BandModel {
        let train_x = CovariateSet::from_scalars(xs).unwrap();
        BandModel {
            mode: if alpha.is_some() {
                BandMode::Simultaneous { gamma: 1.0 }
            } else {
                BandMode::FixedMean { m0: MeanFunction::Zero }
            },
            mean_kernel: alpha.as_ref().map(|_| KernelSpec::Linear),
            var_kernel: kernel,
            gamma: 1.0,
            train_x,
            alpha,
            b,
            opt_n: 0.0,
            mean_term: 0.0,
            diagnostics: FitDiagnostics {
                status: Status::Solved,
                iterations: 0,
                primal_objective: 0.0,
                dual_objective: 0.0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                gap: 0.0,
                psd_side: 1,
                alpha_polished: false,
                variance_patch: 0.0,
            },
            clamp_events: AtomicUsize::new(0),
        }
    }

    #[test]
    fn interval_arithmetic() {
        let i = band_from_moments(1.0, 4.0, 0.0);
        assert_eq!((i.lower, i.upper), (-1.0, 3.0));
        let i = band_from_moments(2.0, 0.0, 0.3);
        assert_eq!((i.lower, i.upper), (2.0, 2.0));
        let i = band_from_moments(0.0, 1.0, 0.5);
        assert!((i.length() - 2.0 * 1.5_f64.sqrt()).abs() < 1e-15);
        assert!((i.length() - 2.449).abs() < 1e-3);
        assert!(PredictionInterval::new(1.0, 0.0).is_err());
    }

    #[test]
    fn evaluation_examples() {
        let m = model_with(SymMatrix::identity(3), KernelSpec::Indicator, &[0.0, 1.0, 2.0], None);
        assert_eq!(m.variance_at(&[1.0]).unwrap(), 1.0);
        assert_eq!(m.variance_at(&[1.5]).unwrap(), 0.0);
        assert_eq!(m.mean_at(&[7.0]).unwrap(), 0.0);
        assert!(m.interval(&[0.0], -1.0).is_err());
        assert!(m.variance_at(&[1.0, 2.0]).is_err());

        let z = model_with(SymMatrix::zeros(2), KernelSpec::Linear, &[1.0, 2.0], Some(vec![0.0, 0.0]));
        for x in [-3.0, 0.0, 4.5] {
            assert_eq!(z.variance_at(&[x]).unwrap(), 0.0);
            assert_eq!(z.mean_at(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_variance_is_clamped_and_counted() {
        let b = SymMatrix::from_diag(&[-1e-12]);
        let m = model_with(b, KernelSpec::Linear, &[1.0], None);
        assert_eq!(m.variance_at(&[1.0]).unwrap(), 0.0);
        assert_eq!(m.clamp_events(), 1);
    }

    #[test]
    fn spec_validation() {
        let bad = BandProblemSpec {
            mode: BandMode::Simultaneous { gamma: -1.0 },
            mean_kernel: Some(KernelSpec::Linear),
            var_kernel: KernelSpec::Linear,
        };
        assert!(bad.validate().is_err());
        let missing = BandProblemSpec {
            mode: BandMode::Simultaneous { gamma: 1.0 },
            mean_kernel: None,
            var_kernel: KernelSpec::Linear,
        };
        assert!(missing.validate().is_err());
        let xs = CovariateSet::from_scalars(&[1.0]).unwrap();
        let spec = BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::Linear);
        assert!(build(&spec, &xs, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_point_program_shape() {
        let xs = CovariateSet::from_scalars(&[1.0]).unwrap();
        let spec = BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::Linear);
        let p = build(&spec, &xs, &[2.0]).unwrap();
        assert_eq!(p.cones.blocks, vec![Cone::NonNeg(1), Cone::Psd(1)]);
        assert_eq!(p.num_vars(), 1);
        assert_eq!(p.c, vec![1.0]);
        assert_eq!(p.b, vec![-4.0, 0.0]);
    }

    #[test]
    fn simultaneous_program_shape() {
        let xs = CovariateSet::from_scalars(&[0.5, 1.0, 2.0]).unwrap();
        let spec = BandProblemSpec::simultaneous(1.0, KernelSpec::Linear, KernelSpec::Indicator);
        let p = build(&spec, &xs, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            p.cones.blocks,
            vec![
                Cone::Zero(3),
                Cone::SecondOrder(3),
                Cone::SecondOrder(3),
                Cone::SecondOrder(3),
                Cone::SecondOrder(5),
                Cone::Psd(3)
            ]
        );
        // svec(B) 6 + t 3 + α 3 + u 1
        assert_eq!(p.num_vars(), 13);
        let svr = BandProblemSpec::svr(1.0, KernelSpec::Linear, KernelSpec::Indicator);
        let p = build(&svr, &xs, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.cones.blocks[1], Cone::NonNeg(6));
    }

    #[test]
    fn zero_mean_kernel_row_becomes_linear() {
        // x = 0 makes the linear mean-kernel row vanish
        let xs = CovariateSet::from_scalars(&[0.0, 1.0]).unwrap();
        let spec = BandProblemSpec::simultaneous(1.0, KernelSpec::Linear, KernelSpec::Indicator);
        let p = build(&spec, &xs, &[1.0, 2.0]).unwrap();
        assert_eq!(p.cones.blocks[1], Cone::NonNeg(1));
    }

    #[test]
    fn trivial_point_objective() {
        let xs = CovariateSet::from_scalars(&[1.0, 2.0]).unwrap();
        let spec = BandProblemSpec::simultaneous(1.0, KernelSpec::Linear, KernelSpec::Linear);
        // K = [[1,2],[2,4]], ‖k_1‖² = 5, ‖k_2‖² = 20, y = (1, 4)
        let t = trivial_objective(&spec, &xs, &[1.0, 4.0]).unwrap().unwrap();
        assert!((t - (16.0 / 20.0) * 5.0).abs() < 1e-12);
    }

    #[test]
    fn mean_function_eval() {
        let f = MeanFunction::Affine {
            intercept: 1.0,
            weights: vec![2.0],
        };
        assert_eq!(f.eval(&[3.0]).unwrap(), 7.0);
        assert!(f.eval(&[3.0, 1.0]).is_err());
        assert_eq!(MeanFunction::Constant { value: 2.5 }.eval(&[9.0]).unwrap(), 2.5);
    }
}
