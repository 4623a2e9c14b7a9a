//! Reference bands: simple linear regression, split and full conformal
//! prediction, and the closed-form kernel ridge regression coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram, CovariateSet, KernelSpec};
use crate::linalg::{cholesky, default_jitter, dot, lu_solve};
use crate::sdpband::PredictionInterval;

/// Two-sided normal quantile factor used by the SLR band (`2 × 1.96`).
const SLR_WIDTH_FACTOR: f64 = 3.92;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlrModel {
    pub intercept: f64,
    pub slope: f64,
    pub xbar: f64,
    /// `Σ (x_i − x̄)²`
    pub sxx: f64,
    /// Residual standard error `√(Σ ê² / (n − 2))`.
    pub s_hat: f64,
    pub n: usize,
}

impl SlrModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn slr_fit(xs: &CovariateSet, ys: &[f64]) -> Result<SlrModel> {
    check_dim(xs.len(), ys.len())?;
    if xs.dim() != 1 {
        return Err(Error::InvalidArgument(format!("SLR needs one covariate, got {}", xs.dim())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("SLR needs at least 3 points, got {n}")));
    }
    let x = xs.first_coords();
    let xbar = x.iter().sum::<f64>() / n as f64;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("SLR covariate is constant".into()));
    }
    let sxy: f64 = x.iter().zip(ys).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sse: f64 = x.iter().zip(ys).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(SlrModel {
        intercept,
        slope,
        xbar,
        sxx,
        s_hat: (sse / (n - 2) as f64).sqrt(),
        n,
    })
}

/// Interval centered on the fitted line with total length
/// `(1 + √(1/n + (x − x̄)²/sxx)) · 3.92 · ŝ`.
pub fn slr_interval(m: &SlrModel, x: f64) -> PredictionInterval {
    let len = (1.0 + (1.0 / m.n as f64 + (x - m.xbar).powi(2) / m.sxx).sqrt()) * SLR_WIDTH_FACTOR * m.s_hat;
    PredictionInterval::centered(m.predict(x), len / 2.0)
}

/// A point predictor produced by a [`Regressor`].
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Fit step of a conformal method's inner regression.
pub trait Regressor {
    type Fitted: Predictor;
    fn fit(&self, xs: &CovariateSet, ys: &[f64]) -> Result<Self::Fitted>;
}

/// Ordinary least squares with intercept on the raw covariates.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastSquares;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl Predictor for LinearFit {
    fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.weights, x)
    }
}

impl Regressor for LeastSquares {
    type Fitted = LinearFit;

    fn fit(&self, xs: &CovariateSet, ys: &[f64]) -> Result<LinearFit> {
        check_dim(xs.len(), ys.len())?;
        if xs.is_empty() {
            return Err(Error::InvalidArgument("least squares on an empty set".into()));
        }
        let d = xs.dim();
        let n = xs.len() as f64;
        let xbar: Vec<f64> = (0..d).map(|k| xs.rows().map(|r| r[k]).sum::<f64>() / n).collect();
        let ybar = ys.iter().sum::<f64>() / n;
        // centered normal equations; directions without spread get weight 0
        let mut sxx = vec![0.0; d * d];
        let mut sxy = vec![0.0; d];
        for (r, y) in xs.rows().zip(ys) {
            for p in 0..d {
                let cp = r[p] - xbar[p];
                sxy[p] += cp * (y - ybar);
                for q in 0..d {
                    sxx[p * d + q] += cp * (r[q] - xbar[q]);
                }
            }
        }
        let scale = (0..d).map(|p| sxx[p * d + p]).fold(0.0_f64, f64::max);
        let weights = if scale == 0.0 {
            vec![0.0; d]
        } else {
            for p in 0..d {
                sxx[p * d + p] += 1e-12 * scale;
            }
            lu_solve(&sxx, &sxy).unwrap_or_else(|_| vec![0.0; d])
        };
        Ok(LinearFit {
            intercept: ybar - dot(&weights, &xbar),
            weights,
        })
    }
}

/// `⌈(m + 1)(1 − α)⌉`, robust to round-off in the product.
pub fn conformal_rank(m: usize, alpha: f64) -> usize {
    let v = (m + 1) as f64 * (1.0 - alpha);
    (v - 1e-9 * v.max(1.0)).ceil().max(0.0) as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Constant-width band `f̂(x) ± width`.
#[derive(Debug, Clone)]
pub struct SplitConformalBand<P> {
    pub width: f64,
    pub predictor: P,
}

impl<P: Predictor> SplitConformalBand<P> {
    pub fn interval(&self, x: &[f64]) -> PredictionInterval {
        PredictionInterval::centered(self.predictor.predict(x), self.width)
    }
}

/// Fits on `train` and takes the `⌈(m+1)(1−α)⌉`-th smallest absolute
/// calibration residual as the half-width.
pub fn split_conformal<R: Regressor>(
    train: (&CovariateSet, &[f64]),
    calib: (&CovariateSet, &[f64]),
    alpha: f64,
    regressor: &R,
) -> Result<SplitConformalBand<R::Fitted>> {
    check_alpha(alpha)?;
    check_dim(calib.0.len(), calib.1.len())?;
    let predictor = regressor.fit(train.0, train.1)?;
    let mut scores: Vec<f64> = calib
        .0
        .rows()
        .zip(calib.1)
        .map(|(x, y)| (y - predictor.predict(x)).abs())
        .collect();
    let m = scores.len();
    let k = conformal_rank(m, alpha);
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} needs rank {k} of {m} calibration residuals"
        )));
    }
    scores.sort_by(f64::total_cmp);
    Ok(SplitConformalBand {
        width: scores[k - 1],
        predictor,
    })
}

/// `points` equispaced values spanning `[min y − 3r, max y + 3r]`, `r` the
/// range of `ys`.
pub fn default_y_grid(ys: &[f64], points: usize) -> Result<Vec<f64>> {
    if ys.is_empty() || points < 2 {
        return Err(Error::InvalidArgument("y grid needs data and at least 2 points".into()));
    }
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let (a, b) = if range > 0.0 {
        (lo - 3.0 * range, hi + 3.0 * range)
    } else {
        (lo - 1.0, hi + 1.0)
    };
    Ok((0..points).map(|k| a + (b - a) * k as f64 / (points - 1) as f64).collect())
}

pub const DEFAULT_Y_GRID_POINTS: usize = 301;

/// Per-point full conformal intervals; `None` where no grid value was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullConformalBand {
    pub x_eval: CovariateSet,
    pub intervals: Vec<Option<PredictionInterval>>,
}

/// For every `x` and grid value `y`, refits on the data augmented with
/// `(x, y)` and keeps `y` when its absolute residual is at most the
/// `⌈(n+1)(1−α)⌉`-th smallest of the `n + 1` residuals. The interval is the
/// hull of the kept values.
pub fn full_conformal<R: Regressor>(
    data: (&CovariateSet, &[f64]),
    x_eval: &CovariateSet,
    y_grid: &[f64],
    alpha: f64,
    regressor: &R,
) -> Result<FullConformalBand> {
    check_alpha(alpha)?;
    let (xs, ys) = data;
    check_dim(xs.len(), ys.len())?;
    check_dim(xs.dim(), x_eval.dim())?;
    if y_grid.is_empty() || y_grid.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("y grid must be finite and non-empty".into()));
    }
    let n = xs.len();
    // rank among the n + 1 augmented scores
    let k = conformal_rank(n, alpha).clamp(1, n + 1);
    let mut intervals = Vec::with_capacity(x_eval.len());
    let mut aug_y = ys.to_vec();
    aug_y.push(0.0);
    let mut scores = vec![0.0; n + 1];
    for x in x_eval.rows() {
        let aug_x = xs.concat(&CovariateSet::from_flat(x.to_vec(), x.len())?)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &y in y_grid {
            aug_y[n] = y;
            let f = regressor.fit(&aug_x, &aug_y)?;
            for (s, (xi, yi)) in scores.iter_mut().zip(aug_x.rows().zip(&aug_y)) {
                *s = (yi - f.predict(xi)).abs();
            }
            let own = scores[n];
            // y is kept when fewer than k scores are strictly smaller than its own
            let below = scores.iter().filter(|&&s| s < own).count();
            if below < k {
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        intervals.push((lo <= hi).then(|| PredictionInterval { lower: lo, upper: hi }));
    }
    Ok(FullConformalBand {
        x_eval: x_eval.clone(),
        intervals,
    })
}

/// `α = (K + γI)⁻¹ y`.
pub fn krr_closed_form(xs: &CovariateSet, ys: &[f64], kernel: &KernelSpec, gamma: f64) -> Result<Vec<f64>> {
    check_dim(xs.len(), ys.len())?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be finite and > 0, got {gamma}")));
    }
    let mut k = gram(kernel, xs);
    k.add_diag(gamma);
    let chol = match cholesky(&k, 0.0) {
        Ok(c) => c,
        Err(_) => cholesky(&k, default_jitter(&k))?,
    };
    Ok(chol.solve(ys))
}
