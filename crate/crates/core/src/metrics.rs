//! Coverage, interval length and mean-estimation error.

use serde::{Deserialize, Serialize};

use crate::dgp::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::CovariateSet;
use crate::sdpband::PredictionInterval;

/// Fraction of `(x, y)` pairs with `y` in the closed band at `x`.
pub fn coverage<F>(band: F, xs: &CovariateSet, ys: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<PredictionInterval>,
{
    check_dim(xs.len(), ys.len())?;
    if ys.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty test set".into()));
    }
    let mut hit = 0usize;
    for (x, y) in xs.rows().zip(ys) {
        if band(x)?.contains(*y) {
            hit += 1;
        }
    }
    Ok(hit as f64 / ys.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub median: f64,
    pub mean: f64,
}

/// Median (midpoint of the central pair for even counts) and mean of
/// `upper − lower`.
pub fn length_stats_of(lengths: &[f64]) -> Result<LengthStats> {
    if lengths.is_empty() {
        return Err(Error::InvalidArgument("length statistics of an empty set".into()));
    }
    let mut v = lengths.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    Ok(LengthStats {
        median,
        mean: lengths.iter().sum::<f64>() / n as f64,
    })
}

pub fn length_stats<F>(band: F, eval_xs: &CovariateSet) -> Result<LengthStats>
where
    F: Fn(&[f64]) -> Result<PredictionInterval>,
{
    let lengths = eval_xs.rows().map(|x| Ok(band(x)?.length())).collect::<Result<Vec<_>>>()?;
    length_stats_of(&lengths)
}

/// Mean of `(m̂(x) − m(x))²` over the test covariates.
pub fn mean_mse<F>(estimate: F, test: &LabeledDataset) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let truth = test
        .truth
        .as_ref()
        .ok_or_else(|| Error::Data("test set carries no true mean".into()))?;
    if test.is_empty() {
        return Err(Error::InvalidArgument("MSE over an empty test set".into()));
    }
    let mut s = 0.0;
    for x in test.xs.rows() {
        s += (estimate(x)? - truth.mean(x[0])).powi(2);
    }
    Ok(s / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpKind, DgpSpec, Noise};

    fn xs(n: usize) -> CovariateSet {
        CovariateSet::from_scalars(&(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn coverage_examples() {
        let whole = |_: &[f64]| Ok(PredictionInterval::centered(0.0, f64::INFINITY));
        assert_eq!(coverage(whole, &xs(3), &[1e9, -1e9, 0.0]).unwrap(), 1.0);
        let point = |_: &[f64]| Ok(PredictionInterval::centered(5.0, 0.0));
        assert_eq!(coverage(point, &xs(2), &[4.0, 6.0]).unwrap(), 0.0);
        let unit = |_: &[f64]| Ok(PredictionInterval::centered(0.0, 1.0));
        assert_eq!(coverage(unit, &xs(4), &[0.0, 1.0, -1.0, 2.0]).unwrap(), 0.75);
        assert!(coverage(unit, &xs(1).select(&[]), &[]).is_err());
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_stats_of(&[1.0, 2.0, 3.0]).unwrap(), LengthStats { median: 2.0, mean: 2.0 });
        assert_eq!(length_stats_of(&[4.0, 1.0, 3.0, 2.0]).unwrap(), LengthStats { median: 2.5, mean: 2.5 });
        let w = |_: &[f64]| Ok(PredictionInterval::centered(1.0, 0.75));
        let s = length_stats(w, &xs(5)).unwrap();
        assert_eq!((s.median, s.mean), (1.5, 1.5));
    }

    #[test]
    fn mse_examples() {
        let test = generate(&DgpSpec {
            kind: DgpKind::QuadraticVariance { noise: Noise::Gaussian },
            n: 20,
            seed: 1,
        })
        .unwrap();
        assert_eq!(mean_mse(|_| Ok(0.0), &test).unwrap(), 0.0);
        assert!((mean_mse(|_| Ok(1.0), &test).unwrap() - 1.0).abs() < 1e-15);
        let bare = LabeledDataset::new(test.xs.clone(), test.ys.clone(), None).unwrap();
        assert!(mean_mse(|_| Ok(0.0), &bare).is_err());
    }
}
