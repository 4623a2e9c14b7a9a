//! Seeded synthetic data.
//!
//! Covariates are `x ~ Uniform[−√3, √3]`. All randomness comes from ChaCha20
//! seeded with the spec's seed: stream 0 draws covariates, stream 1 draws
//! noise, stream 2 draws the coefficients of [`DgpKind::RkhsMeanVar`]. Each
//! stream is consumed sequentially, so a larger `n` extends a smaller one.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{kernel_value, CovariateSet, KernelSpec};

pub const SUPPORT_HALF_WIDTH: f64 = 1.732_050_807_568_877_2;

const STREAM_X: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_COEF: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Gaussian,
    /// Uniform on `[−√3, √3]` (mean 0, variance 1).
    Uniform,
}

impl Noise {
    fn draw(self, rng: &mut ChaCha20Rng) -> f64 {
        match self {
            Noise::Gaussian => StandardNormal.sample(rng),
            Noise::Uniform => rng.random_range(-SUPPORT_HALF_WIDTH..=SUPPORT_HALF_WIDTH),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// `m = 0`, `v = 1 + x + 4x²`.
    QuadraticVariance { noise: Noise },
    /// `m = intercept + slope·x`, `v = c0 + c1·x + c2·x²`.
    LinearMeanQuadVar {
        intercept: f64,
        slope: f64,
        variance: [f64; 3],
        noise: Noise,
    },
    /// `m(x) = Σ a_j k_m(x, z_j)`, `v(x) = floor + (Σ b_j k_v(x, z_j))²`
    /// with centers `z_j` and standard normal `a`, `b` from the coefficient
    /// stream.
    RkhsMeanVar {
        mean_kernel: KernelSpec,
        var_kernel: KernelSpec,
        centers: usize,
        variance_floor: f64,
        noise: Noise,
    },
}

impl DgpKind {
    pub fn linear_default(noise: Noise) -> Self {
        DgpKind::LinearMeanQuadVar {
            intercept: 0.0,
            slope: 1.0,
            variance: [1.0, 1.0, 4.0],
            noise,
        }
    }

    pub fn noise(&self) -> Noise {
        match self {
            DgpKind::QuadraticVariance { noise }
            | DgpKind::LinearMeanQuadVar { noise, .. }
            | DgpKind::RkhsMeanVar { noise, .. } => *noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
}

/// The true conditional mean and variance of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueModel {
    Quadratic {
        intercept: f64,
        slope: f64,
        variance: [f64; 3],
    },
    Rkhs {
        mean_kernel: KernelSpec,
        var_kernel: KernelSpec,
        centers: Vec<f64>,
        mean_coef: Vec<f64>,
        var_coef: Vec<f64>,
        variance_floor: f64,
    },
}

impl TrueModel {
    pub fn mean(&self, x: f64) -> f64 {
        match self {
            TrueModel::Quadratic { intercept, slope, .. } => intercept + slope * x,
            TrueModel::Rkhs {
                mean_kernel,
                centers,
                mean_coef,
                ..
            } => expansion(mean_kernel, centers, mean_coef, x),
        }
    }

    pub fn variance(&self, x: f64) -> f64 {
        match self {
            TrueModel::Quadratic { variance: [c0, c1, c2], .. } => c0 + c1 * x + c2 * x * x,
            TrueModel::Rkhs {
                var_kernel,
                centers,
                var_coef,
                variance_floor,
                ..
            } => variance_floor + expansion(var_kernel, centers, var_coef, x).powi(2),
        }
    }
}

fn expansion(k: &KernelSpec, centers: &[f64], coef: &[f64], x: f64) -> f64 {
    centers
        .iter()
        .zip(coef)
        .map(|(z, a)| a * kernel_value(k, &[x], &[*z]).expect("scalar kernels"))
        .sum()
}

/// Minimum of `c0 + c1 x + c2 x²` over `[lo, hi]`.
pub fn quadratic_min(c: [f64; 3], lo: f64, hi: f64) -> f64 {
    let f = |x: f64| c[0] + c[1] * x + c[2] * x * x;
    let mut m = f(lo).min(f(hi));
    if c[2] > 0.0 {
        let v = -c[1] / (2.0 * c[2]);
        if (lo..=hi).contains(&v) {
            m = m.min(f(v));
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub xs: CovariateSet,
    pub ys: Vec<f64>,
    pub truth: Option<TrueModel>,
}

impl LabeledDataset {
    pub fn new(xs: CovariateSet, ys: Vec<f64>, truth: Option<TrueModel>) -> Result<Self> {
        check_dim(xs.len(), ys.len())?;
        Ok(Self { xs, ys, truth })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            xs: self.xs.select(idx),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
            truth: self.truth.clone(),
        }
    }

    /// Consecutive pieces of the given sizes, in order.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total > self.len() {
            return Err(Error::Data(format!("split needs {total} rows, dataset has {}", self.len())));
        }
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&s| {
                let idx: Vec<usize> = (start..start + s).collect();
                start += s;
                self.select(&idx)
            })
            .collect())
    }

    /// Writes the two-section CSV: a header record carrying the spec, then the
    /// covariate section, then the response section.
    pub fn write_csv<W: Write>(&self, spec: Option<&DgpSpec>, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let spec_json = match spec {
            Some(s) => serde_json::to_string(s)?,
            None => String::new(),
        };
        let seed = spec.map(|s| s.seed.to_string()).unwrap_or_default();
        out.write_record(["hetband-dataset", "1", &seed, &spec_json])?;
        out.write_record(["section", "covariates", &self.xs.dim().to_string()])?;
        for row in self.xs.rows() {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.write_record(["section", "response", &self.len().to_string()])?;
        for y in &self.ys {
            out.write_record([y.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format written by [`LabeledDataset::write_csv`]. The truth is
    /// regenerated from the embedded spec when present.
    pub fn read_csv<R: Read>(r: R) -> Result<(Self, Option<DgpSpec>)> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
        let mut records = rd.records();
        let mut next = |what: &str| -> Result<(usize, csv::StringRecord)> {
            match records.next() {
                Some(rec) => {
                    let rec = rec?;
                    let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                    Ok((line, rec))
                }
                None => Err(Error::Data(format!("unexpected end of dataset file, expected {what}"))),
            }
        };
        let (_, head) = next("header")?;
        if head.get(0) != Some("hetband-dataset") || head.get(1) != Some("1") {
            return Err(Error::Data("line 1: not a hetband dataset file (version 1)".into()));
        }
        let spec: Option<DgpSpec> = match head.get(3) {
            Some(s) if !s.is_empty() => Some(serde_json::from_str(s)?),
            _ => None,
        };
        let (line, sec) = next("covariate section")?;
        if sec.get(0) != Some("section") || sec.get(1) != Some("covariates") {
            return Err(Error::Data(format!("line {line}: expected covariate section")));
        }
        let dim: usize = parse_field(sec.get(2), line)?;
        let mut data = Vec::new();
        let n = loop {
            let (line, rec) = next("response section")?;
            if rec.get(0) == Some("section") {
                if rec.get(1) != Some("response") {
                    return Err(Error::Data(format!("line {line}: expected response section")));
                }
                break parse_field::<usize>(rec.get(2), line)?;
            }
            if rec.len() != dim {
                return Err(Error::Data(format!("line {line}: expected {dim} covariates, got {}", rec.len())));
            }
            for f in rec.iter() {
                data.push(parse_field(Some(f), line)?);
            }
        };
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let (line, rec) = next("response value")?;
            ys.push(parse_field(rec.get(0), line)?);
        }
        let xs = CovariateSet::from_flat(data, dim)?;
        let truth = match &spec {
            Some(s) => Some(true_model(s)?),
            None => None,
        };
        Ok((LabeledDataset::new(xs, ys, truth)?, spec))
    }
}

fn parse_field<T: std::str::FromStr>(f: Option<&str>, line: usize) -> Result<T> {
    let f = f.ok_or_else(|| Error::Data(format!("line {line}: missing field")))?;
    f.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse '{f}'")))
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The true model of a spec; for [`DgpKind::RkhsMeanVar`] this draws the
/// expansion from the coefficient stream.
pub fn true_model(spec: &DgpSpec) -> Result<TrueModel> {
    match &spec.kind {
        DgpKind::QuadraticVariance { .. } => Ok(TrueModel::Quadratic {
            intercept: 0.0,
            slope: 0.0,
            variance: [1.0, 1.0, 4.0],
        }),
        DgpKind::LinearMeanQuadVar {
            intercept,
            slope,
            variance,
            ..
        } => {
            let lo = quadratic_min(*variance, -SUPPORT_HALF_WIDTH, SUPPORT_HALF_WIDTH);
            if lo < 0.0 || variance.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!(
                    "variance {variance:?} reaches {lo} on the covariate support"
                )));
            }
            Ok(TrueModel::Quadratic {
                intercept: *intercept,
                slope: *slope,
                variance: *variance,
            })
        }
        DgpKind::RkhsMeanVar {
            mean_kernel,
            var_kernel,
            centers,
            variance_floor,
            ..
        } => {
            mean_kernel.validate()?;
            var_kernel.validate()?;
            if *centers == 0 || !(*variance_floor >= 0.0) {
                return Err(Error::Config("RKHS design needs centers ≥ 1 and a nonnegative floor".into()));
            }
            let mut rng = stream(spec.seed, STREAM_COEF);
            let z: Vec<f64> = (0..*centers)
                .map(|_| rng.random_range(-SUPPORT_HALF_WIDTH..=SUPPORT_HALF_WIDTH))
                .collect();
            let a: Vec<f64> = (0..*centers).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..*centers).map(|_| StandardNormal.sample(&mut rng)).collect();
            Ok(TrueModel::Rkhs {
                mean_kernel: *mean_kernel,
                var_kernel: *var_kernel,
                centers: z,
                mean_coef: a,
                var_coef: b,
                variance_floor: *variance_floor,
            })
        }
    }
}

pub fn generate(spec: &DgpSpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let truth = true_model(spec)?;
    let noise = spec.kind.noise();
    let mut rx = stream(spec.seed, STREAM_X);
    let mut re = stream(spec.seed, STREAM_NOISE);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = rx.random_range(-SUPPORT_HALF_WIDTH..=SUPPORT_HALF_WIDTH);
        let v = truth.variance(x);
        if v < 0.0 {
            return Err(Error::Config(format!("variance {v} < 0 at x = {x}")));
        }
        ys.push(truth.mean(x) + noise.draw(&mut re) * v.sqrt());
        xs.push(x);
    }
    LabeledDataset::new(CovariateSet::from_scalars(&xs)?, ys, Some(truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(noise: Noise, n: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            kind: DgpKind::QuadraticVariance { noise },
            n,
            seed,
        }
    }

    #[test]
    fn variance_formula() {
        let t = true_model(&quad(Noise::Gaussian, 1, 0)).unwrap();
        assert_eq!(t.variance(0.0), 1.0);
        assert_eq!(t.variance(1.0), 6.0);
        assert_eq!(t.variance(-1.0), 4.0);
        assert_eq!(t.mean(0.7), 0.0);
        assert!((quadratic_min([1.0, 1.0, 4.0], -SUPPORT_HALF_WIDTH, SUPPORT_HALF_WIDTH) - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn uniform_noise_moments() {
        let mut rng = stream(9, STREAM_NOISE);
        let draws: Vec<f64> = (0..100_000).map(|_| Noise::Uniform.draw(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((0.98..=1.02).contains(&var), "{var}");
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = generate(&quad(Noise::Gaussian, 50, 7)).unwrap();
        let b = generate(&quad(Noise::Gaussian, 50, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate(&quad(Noise::Gaussian, 80, 7)).unwrap();
        assert_eq!(&c.ys[..50], &a.ys[..]);
        let d = generate(&quad(Noise::Gaussian, 50, 8)).unwrap();
        assert_ne!(a.ys, d.ys);
    }

    #[test]
    fn support_and_validation() {
        let d = generate(&quad(Noise::Uniform, 1000, 1)).unwrap();
        assert!(d.xs.first_coords().iter().all(|x| x.abs() <= SUPPORT_HALF_WIDTH));
        let bad = DgpSpec {
            kind: DgpKind::LinearMeanQuadVar {
                intercept: 0.0,
                slope: 1.0,
                variance: [0.1, 1.0, 0.0],
                noise: Noise::Gaussian,
            },
            n: 5,
            seed: 0,
        };
        assert!(generate(&bad).is_err());
        assert!(generate(&quad(Noise::Gaussian, 0, 0)).is_err());
    }

    #[test]
    fn rkhs_design_is_seeded() {
        let spec = DgpSpec {
            kind: DgpKind::RkhsMeanVar {
                mean_kernel: KernelSpec::Rbf { bandwidth: 0.5 },
                var_kernel: KernelSpec::Rbf { bandwidth: 0.5 },
                centers: 5,
                variance_floor: 0.1,
                noise: Noise::Gaussian,
            },
            n: 30,
            seed: 3,
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        let t = a.truth.as_ref().unwrap();
        assert!(t.variance(0.3) >= 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let spec = quad(Noise::Gaussian, 12, 4);
        let d = generate(&spec).unwrap();
        let mut buf = Vec::new();
        d.write_csv(Some(&spec), &mut buf).unwrap();
        let (back, s) = LabeledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert_eq!(s, Some(spec));

        let plain = LabeledDataset::new(d.xs.clone(), d.ys.clone(), None).unwrap();
        let mut buf = Vec::new();
        plain.write_csv(None, &mut buf).unwrap();
        assert_eq!(LabeledDataset::read_csv(buf.as_slice()).unwrap().0, plain);
        assert!(LabeledDataset::read_csv("nonsense\n".as_bytes()).is_err());
    }

    #[test]
    fn split_consecutive() {
        let d = generate(&quad(Noise::Gaussian, 10, 2)).unwrap();
        let parts = d.split(&[3, 3, 4]).unwrap();
        assert_eq!(parts[1].ys, d.ys[3..6].to_vec());
        assert!(d.split(&[6, 6]).is_err());
    }
}
