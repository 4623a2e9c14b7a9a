//! Dyadic search for the band inflation `δ` that controls miscoverage.
//!
//! Starting from `δ = −1` (the degenerate band `[m̂, m̂]`), `δ` moves halfway
//! towards `Δ` while more than `3α/4` of the calibration points fall outside
//! `PI(x, δ)`. Bands are nested in `δ`, so the search is monotone.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::CovariateSet;
use crate::sdpband::{band_from_moments, BandModel};

/// Hard cap on halvings.
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub delta_star: f64,
    pub iterations: usize,
    pub empirical_miscoverage: f64,
    /// The `Δ` used.
    pub delta_max: f64,
    /// Calibration points with `v̂ = 0` and nonzero residual, never covered.
    pub uncoverable: Vec<usize>,
}

/// `(m̂(x'_j), v̂(x'_j))` for each calibration point.
fn moments(model: &BandModel, calib_x: &CovariateSet, calib_y: &[f64]) -> Result<Vec<(f64, f64)>> {
    if calib_x.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    check_dim(calib_x.len(), calib_y.len())?;
    calib_x.rows().map(|x| model.moments_at(x)).collect()
}

fn covered(mv: &[(f64, f64)], ys: &[f64], delta: f64) -> Vec<bool> {
    mv.iter()
        .zip(ys)
        .map(|(&(m, v), &y)| band_from_moments(m, v, delta).contains(y))
        .collect()
}

fn miscoverage(mv: &[(f64, f64)], ys: &[f64], delta: f64) -> f64 {
    let missed = covered(mv, ys, delta).iter().filter(|c| !**c).count();
    missed as f64 / ys.len() as f64
}

/// Smallest `Δ` at which every coverable calibration point lies in its band,
/// plus the indices that no `δ` can cover.
fn delta_covering_all(mv: &[(f64, f64)], ys: &[f64]) -> Result<(f64, Vec<usize>)> {
    let mut uncoverable = Vec::new();
    let mut ratio = 0.0_f64;
    for (j, (&(m, v), &y)) in mv.iter().zip(ys).enumerate() {
        let r2 = (y - m) * (y - m);
        if v > 0.0 {
            ratio = ratio.max(r2 / v);
        } else if r2 > 0.0 {
            uncoverable.push(j);
        }
    }
    if uncoverable.len() == ys.len() {
        return Err(Error::Calibration(format!(
            "no calibration point can be covered: all {} have zero fitted variance and nonzero residual",
            ys.len()
        )));
    }
    let mut delta = ratio - 1.0;
    // rounding in (1 + Δ)·v̂ can leave the extreme point a hair outside
    let coverable: Vec<bool> = (0..ys.len()).map(|j| !uncoverable.contains(&j)).collect();
    for _ in 0..64 {
        let cov = covered(mv, ys, delta);
        if cov.iter().zip(&coverable).all(|(c, need)| *c || !need) {
            break;
        }
        delta += f64::EPSILON * (1.0 + delta.abs());
    }
    Ok((delta, uncoverable))
}

/// `max_j (y'_j − m̂(x'_j))² / v̂(x'_j) − 1` over points with `v̂ > 0`; at this
/// `Δ` every such point is covered. Points with `v̂ = 0` and a nonzero
/// residual are logged as uncoverable.
pub fn auto_delta_max(model: &BandModel, calib_x: &CovariateSet, calib_y: &[f64]) -> Result<f64> {
    let mv = moments(model, calib_x, calib_y)?;
    let (delta, uncoverable) = delta_covering_all(&mv, calib_y)?;
    if !uncoverable.is_empty() {
        log::warn!("calibration points {uncoverable:?} have zero fitted variance and cannot be covered");
    }
    Ok(delta)
}

pub fn calibrate(
    model: &BandModel,
    calib_x: &CovariateSet,
    calib_y: &[f64],
    alpha: f64,
    delta_max: Option<f64>,
) -> Result<CalibrationResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mv = moments(model, calib_x, calib_y)?;
    let (auto, uncoverable) = delta_covering_all(&mv, calib_y)?;
    let delta_max = match delta_max {
        Some(d) if !(d > -1.0) || !d.is_finite() => {
            return Err(Error::InvalidArgument(format!("delta_max must be finite and exceed -1, got {d}")))
        }
        Some(d) => d,
        None => auto,
    };
    let threshold = 0.75 * alpha;

    let at_max = miscoverage(&mv, calib_y, delta_max);
    if at_max > threshold {
        let missed: Vec<usize> = covered(&mv, calib_y, delta_max)
            .iter()
            .enumerate()
            .filter(|(_, c)| !**c)
            .map(|(j, _)| j)
            .collect();
        return Err(Error::Calibration(format!(
            "miscoverage {at_max} at delta_max = {delta_max} exceeds 3α/4 = {threshold}; uncovered points {missed:?}"
        )));
    }

    let mut delta = -1.0;
    let mut iterations = 0;
    let mut miss = miscoverage(&mv, calib_y, delta);
    while miss > threshold {
        if iterations == MAX_ITERATIONS {
            return Err(Error::Calibration(format!(
                "no δ met the threshold within {MAX_ITERATIONS} halvings (last δ = {delta}, miscoverage {miss})"
            )));
        }
        delta = (delta + delta_max) / 2.0;
        iterations += 1;
        miss = miscoverage(&mv, calib_y, delta);
    }
    Ok(CalibrationResult {
        delta_star: delta,
        iterations,
        empirical_miscoverage: miss,
        delta_max,
        uncoverable,
    })
}
