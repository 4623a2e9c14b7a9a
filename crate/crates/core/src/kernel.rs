//! Kernel functions, Gram matrices and cross-kernel vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::SymMatrix;

/// A positive-definite kernel with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `⟨x, x'⟩`
    Linear,
    /// `(offset + scale·⟨x, x'⟩)^degree`
    Polynomial { degree: u32, offset: f64, scale: f64 },
    /// `exp(−‖x − x'‖² / (2·bandwidth²))`
    Rbf { bandwidth: f64 },
    /// `1` when the points are bitwise equal, else `0`.
    Indicator,
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Self {
        KernelSpec::Polynomial {
            degree,
            offset: 1.0,
            scale: 1.0,
        }
    }

    /// RBF kernel with the median pairwise distance of `xs` as bandwidth.
    pub fn rbf_median(xs: &CovariateSet) -> Self {
        KernelSpec::Rbf {
            bandwidth: median_pairwise_distance(xs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Polynomial {
                degree,
                offset,
                scale,
            } => {
                if degree < 1 {
                    return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
                }
                if !(offset >= 0.0) || !(scale > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial needs offset >= 0 and scale > 0 (got {offset}, {scale})"
                    )));
                }
            }
            KernelSpec::Rbf { bandwidth } => {
                if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "rbf bandwidth must be positive, got {bandwidth}"
                    )));
                }
            }
            KernelSpec::Linear | KernelSpec::Indicator => {}
        }
        Ok(())
    }

    #[inline]
    fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, x2),
            KernelSpec::Polynomial {
                degree,
                offset,
                scale,
            } => (offset + scale * dot(x, x2)).powi(degree as i32),
            KernelSpec::Rbf { bandwidth } => {
                let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Indicator => {
                if x.iter().zip(x2).all(|(a, b)| a.to_bits() == b.to_bits()) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial {
                degree,
                offset,
                scale,
            } => write!(f, "poly:{degree}:{offset}:{scale}"),
            KernelSpec::Rbf { bandwidth } => write!(f, "rbf:{bandwidth}"),
            KernelSpec::Indicator => write!(f, "indicator"),
        }
    }
}

/// Parses `linear`, `indicator`, `poly:<degree>[:<offset>[:<scale>]]` and
/// `rbf:<bandwidth>`. A bare `rbf` needs training data; see
/// [`KernelChoice`].
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match KernelChoice::from_str(s)? {
            KernelChoice::Fixed(k) => Ok(k),
            KernelChoice::RbfMedian => Err(Error::Config(
                "rbf kernel needs an explicit bandwidth here (rbf:<bandwidth>)".into(),
            )),
        }
    }
}

/// A kernel as written in a config, possibly waiting for training data to
/// set the RBF bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Fixed(KernelSpec),
    RbfMedian,
}

impl KernelChoice {
    pub fn resolve(&self, xs: &CovariateSet) -> KernelSpec {
        match self {
            KernelChoice::Fixed(k) => *k,
            KernelChoice::RbfMedian => KernelSpec::rbf_median(xs),
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Fixed(k) => k.fmt(f),
            KernelChoice::RbfMedian => write!(f, "rbf"),
        }
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, what: &str| -> Result<f64> {
            parts[i]
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} in kernel '{s}'")))
        };
        let spec = match parts[0] {
            "linear" if parts.len() == 1 => KernelSpec::Linear,
            "indicator" if parts.len() == 1 => KernelSpec::Indicator,
            "rbf" if parts.len() == 1 => return Ok(KernelChoice::RbfMedian),
            "rbf" if parts.len() == 2 => KernelSpec::Rbf {
                bandwidth: num(1, "bandwidth")?,
            },
            "poly" | "polynomial" if (2..=4).contains(&parts.len()) => KernelSpec::Polynomial {
                degree: parts[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad degree in kernel '{s}'")))?,
                offset: if parts.len() > 2 { num(2, "offset")? } else { 1.0 },
                scale: if parts.len() > 3 { num(3, "scale")? } else { 1.0 },
            },
            _ => return Err(Error::Config(format!("unknown kernel '{s}'"))),
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(KernelChoice::Fixed(spec))
    }
}

/// `n` covariate rows of common dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    dim: usize,
    data: Vec<f64>,
}

impl CovariateSet {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("covariate set is empty".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("covariate dimension must be >= 1".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot split {} values into rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    /// One-dimensional covariates.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::from_flat(xs.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// First coordinate of every row.
    pub fn first_coords(&self) -> Vec<f64> {
        self.rows().map(|r| r[0]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn concat(&self, other: &CovariateSet) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            dim: self.dim,
            data,
        })
    }
}

pub fn kernel_value(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(x.len(), x2.len())?;
    Ok(spec.eval(x, x2))
}

/// Gram matrix `K_ij = K(x_i, x_j)`.
pub fn gram(spec: &KernelSpec, xs: &CovariateSet) -> SymMatrix {
    SymMatrix::from_fn(xs.len(), |i, j| spec.eval(xs.row(i), xs.row(j)))
}

/// Cross-kernel vector `[K(x, x_1), …, K(x, x_n)]`.
pub fn cross(spec: &KernelSpec, xs: &CovariateSet, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(xs.dim(), x.len())?;
    Ok(xs.rows().map(|xi| spec.eval(x, xi)).collect())
}

/// Median of all pairwise Euclidean distances; `1.0` when every point
/// coincides.
pub fn median_pairwise_distance(xs: &CovariateSet) -> f64 {
    let n = xs.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            let s: f64 = xs
                .row(i)
                .iter()
                .zip(xs.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, d: usize, seed: u64) -> CovariateSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CovariateSet::from_flat((0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(), d)
            .unwrap()
    }

    #[test]
    fn values() {
        assert_eq!(kernel_value(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let rbf = KernelSpec::Rbf { bandwidth: 0.3 };
        assert_eq!(kernel_value(&rbf, &[0.7, -1.0], &[0.7, -1.0]).unwrap(), 1.0);
        let poly = KernelSpec::polynomial(3);
        assert_eq!(kernel_value(&poly, &[1.0], &[1.0]).unwrap(), 8.0);
        assert!(kernel_value(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(kernel_value(&KernelSpec::Indicator, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(kernel_value(&KernelSpec::Indicator, &[1.0, 2.0], &[1.0, 2.5]).unwrap(), 0.0);
    }

    #[test]
    fn gram_examples() {
        let xs = CovariateSet::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(gram(&KernelSpec::Indicator, &xs), SymMatrix::identity(3));
        let xs = CovariateSet::from_scalars(&[1.0, 2.0]).unwrap();
        assert_eq!(gram(&KernelSpec::Linear, &xs).to_dense(), vec![1.0, 2.0, 2.0, 4.0]);
        let xs = random_set(7, 3, 1);
        let k = gram(&KernelSpec::rbf_median(&xs), &xs);
        assert!(k.diag().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cross_examples() {
        let xs = CovariateSet::from_scalars(&[1.0, 2.0]).unwrap();
        assert_eq!(cross(&KernelSpec::Linear, &xs, &[3.0]).unwrap(), vec![3.0, 6.0]);
        assert_eq!(cross(&KernelSpec::Indicator, &xs, &[1.5]).unwrap(), vec![0.0, 0.0]);
        assert!(cross(&KernelSpec::Linear, &xs, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cross_at_training_point_is_gram_column() {
        let xs = random_set(6, 2, 3);
        for spec in [
            KernelSpec::Linear,
            KernelSpec::polynomial(2),
            KernelSpec::rbf_median(&xs),
            KernelSpec::Indicator,
        ] {
            let k = gram(&spec, &xs);
            for j in 0..xs.len() {
                let c = cross(&spec, &xs, xs.row(j)).unwrap();
                for (i, v) in c.iter().enumerate() {
                    assert_eq!(*v, k.get(i, j));
                }
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for s in ["linear", "indicator", "poly:3:1:1", "rbf:0.5"] {
            let k: KernelSpec = s.parse().unwrap();
            assert_eq!(k.to_string().parse::<KernelSpec>().unwrap(), k);
        }
        assert_eq!("poly:2".parse::<KernelSpec>().unwrap(), KernelSpec::polynomial(2));
        assert_eq!("rbf".parse::<KernelChoice>().unwrap(), KernelChoice::RbfMedian);
        assert!("poly:0".parse::<KernelSpec>().is_err());
        assert!("rbf:-1".parse::<KernelSpec>().is_err());
        assert!("cosine".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn median_distance() {
        let xs = CovariateSet::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&xs), 2.0);
        let same = CovariateSet::from_scalars(&[2.0, 2.0]).unwrap();
        assert_eq!(median_pairwise_distance(&same), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn gram_is_psd(seed in 0u64..200, n in 1usize..15, d in 1usize..4) {
            let xs = random_set(n, d, seed);
            for spec in [KernelSpec::Linear, KernelSpec::polynomial(3), KernelSpec::rbf_median(&xs), KernelSpec::Indicator] {
                let k = gram(&spec, &xs);
                let maxdiag = k.diag().into_iter().fold(0.0_f64, f64::max);
                let min = *sym_eig(&k, 1e-10).unwrap().values.last().unwrap();
                proptest::prop_assert!(min >= -1e-8 * (1.0 + maxdiag), "{spec}: {min}");
            }
        }

        #[test]
        fn kernel_symmetric(seed in 0u64..200) {
            let xs = random_set(2, 3, seed);
            for spec in [KernelSpec::Linear, KernelSpec::polynomial(2), KernelSpec::Rbf { bandwidth: 0.7 }] {
                let a = kernel_value(&spec, xs.row(0), xs.row(1)).unwrap();
                let b = kernel_value(&spec, xs.row(1), xs.row(0)).unwrap();
                proptest::prop_assert_eq!(a, b);
            }
        }
    }
}
