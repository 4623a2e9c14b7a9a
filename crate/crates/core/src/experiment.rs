//! Experiment runner: config parsing, multi-method comparison over seeds,
//! γ cross-validation and factor-file ingestion.
//!
//! A config is a flat `key = value` file. `#` starts a comment. Each
//! `method = <kind>` line opens a block; `method.<key>` lines that follow set
//! options of that block.
//!
//! ```text
//! dgp = quadratic
//! noise = gaussian
//! alpha = 0.05
//! train = 50
//! calib = 50
//! test = 500
//! seeds = 0..20
//!
//! method = sdp-simultaneous
//! method.mean_kernel = linear
//! method.var_kernel = poly:2
//! method.gamma = 10
//!
//! method = split-conformal
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{
    default_y_grid, full_conformal, slr_fit, slr_interval, split_conformal, LeastSquares, Predictor, Regressor,
    DEFAULT_Y_GRID_POINTS,
};
use crate::calibrate::calibrate;
use crate::conic::SolverSettings;
use crate::dgp::{generate, DgpKind, DgpSpec, LabeledDataset, Noise};
use crate::error::{Error, Result};
use crate::kernel::{CovariateSet, KernelChoice, KernelSpec};
use crate::metrics::length_stats_of;
use crate::sdpband::{band_from_moments, fit, BandModel, BandProblemSpec, MeanFunction, PredictionInterval};

/// Stream of the per-seed shuffle applied to file input.
const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodKind {
    Slr,
    SdpFixed,
    SdpSimultaneous,
    SdpSvr,
    SplitConformal,
    FullConformal,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Slr,
        MethodKind::SdpFixed,
        MethodKind::SdpSimultaneous,
        MethodKind::SdpSvr,
        MethodKind::SplitConformal,
        MethodKind::FullConformal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Slr => "slr",
            MethodKind::SdpFixed => "sdp-fixed",
            MethodKind::SdpSimultaneous => "sdp-simultaneous",
            MethodKind::SdpSvr => "sdp-svr",
            MethodKind::SplitConformal => "split-conformal",
            MethodKind::FullConformal => "full-conformal",
        }
    }

    fn is_sdp(self) -> bool {
        matches!(self, MethodKind::SdpFixed | MethodKind::SdpSimultaneous | MethodKind::SdpSvr)
    }

    fn learns_mean(self) -> bool {
        matches!(self, MethodKind::SdpSimultaneous | MethodKind::SdpSvr)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// The fixed mean of `sdp-fixed`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanChoice {
    Zero,
    Constant(f64),
    /// Least squares on the training split.
    Ols,
}

impl FromStr for MeanChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(MeanChoice::Zero),
            "ols" => Ok(MeanChoice::Ols),
            t => match t.strip_prefix("constant:") {
                Some(v) => Ok(MeanChoice::Constant(parse_num(v, "m0")?)),
                None => Err(Error::Config(format!("unknown m0 '{s}' (zero, ols, constant:<v>)"))),
            },
        }
    }
}

impl fmt::Display for MeanChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanChoice::Zero => f.write_str("zero"),
            MeanChoice::Constant(v) => write!(f, "constant:{v}"),
            MeanChoice::Ols => f.write_str("ols"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Name in output tables; defaults to the method kind.
    pub label: String,
    pub mean_kernel: KernelChoice,
    pub var_kernel: KernelChoice,
    /// Falls back to the top-level `gamma`.
    pub gamma: Option<f64>,
    pub m0: MeanChoice,
    pub delta_max: Option<f64>,
    pub grid_points: usize,
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            label: kind.name().to_string(),
            mean_kernel: KernelChoice::Fixed(KernelSpec::Linear),
            var_kernel: KernelChoice::Fixed(KernelSpec::polynomial(2)),
            gamma: None,
            m0: MeanChoice::Ols,
            delta_max: None,
            grid_points: DEFAULT_Y_GRID_POINTS,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "label" => {
                if value.is_empty() || value.contains([',', '"', '\n']) {
                    return Err(Error::Config(format!("label '{value}' must be non-empty without commas or quotes")));
                }
                self.label = value.to_string();
            }
            "mean_kernel" => self.mean_kernel = value.parse()?,
            "var_kernel" => self.var_kernel = value.parse()?,
            "gamma" => self.gamma = Some(parse_num(value, "gamma")?),
            "m0" => self.m0 = value.parse()?,
            "delta_max" => self.delta_max = Some(parse_num(value, "delta_max")?),
            "grid_points" => self.grid_points = parse_int(value, "grid_points")?,
            _ => return Err(Error::Config(format!("unknown method option '{key}'"))),
        }
        Ok(())
    }

    fn echo(&self) -> serde_json::Value {
        json!({
            "kind": self.kind.name(),
            "label": self.label,
            "mean_kernel": self.mean_kernel.to_string(),
            "var_kernel": self.var_kernel.to_string(),
            "gamma": self.gamma,
            "m0": self.m0.to_string(),
            "delta_max": self.delta_max,
            "grid_points": self.grid_points,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dgp(DgpKind),
    /// A dataset in the two-section CSV format, reshuffled per seed.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub methods: Vec<MethodConfig>,
    pub gamma: f64,
    /// Grid for `gamma-sweep`.
    pub gammas: Vec<f64>,
    pub alpha: f64,
    pub train: usize,
    pub calib: usize,
    pub test: usize,
    pub seeds: Vec<u64>,
    pub solver: SolverSettings,
    pub output: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Dgp(DgpKind::QuadraticVariance { noise: Noise::Gaussian }),
            methods: Vec::new(),
            gamma: 10.0,
            gammas: vec![0.1, 1.0, 10.0],
            alpha: 0.05,
            train: 50,
            calib: 50,
            test: 500,
            seeds: (0..20).collect(),
            solver: SolverSettings::default(),
            output: None,
            bundle: None,
        }
    }
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("bad {what} '{s}'")))
}

fn parse_int<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::Config(format!("bad {what} '{s}'")))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',').map(|p| parse_num(p, what)).collect()
}

/// `a..b` (half-open) or a comma list.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (parse_int(a, "seed range")?, parse_int(b, "seed range")?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| parse_int(p, "seed")).collect()
}

pub fn parse_noise(s: &str) -> Result<Noise> {
    match s {
        "gaussian" => Ok(Noise::Gaussian),
        "uniform" => Ok(Noise::Uniform),
        _ => Err(Error::Config(format!("unknown noise '{s}' (gaussian, uniform)"))),
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut dgp = "quadratic".to_string();
        let mut dgp_opts: BTreeMap<String, String> = BTreeMap::new();
        let mut noise = Noise::Gaussian;
        let mut input: Option<PathBuf> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let r: Result<()> = (|| {
                match key {
                    "method" => cfg.methods.push(MethodConfig::new(value.parse()?)),
                    "dgp" => dgp = value.to_string(),
                    "noise" => noise = parse_noise(value)?,
                    "input" => input = Some(PathBuf::from(value)),
                    "gamma" => cfg.gamma = parse_num(value, "gamma")?,
                    "gammas" => cfg.gammas = parse_list(value, "gammas")?,
                    "alpha" => cfg.alpha = parse_num(value, "alpha")?,
                    "train" => cfg.train = parse_int(value, "train")?,
                    "calib" => cfg.calib = parse_int(value, "calib")?,
                    "test" => cfg.test = parse_int(value, "test")?,
                    "seeds" => cfg.seeds = parse_seeds(value)?,
                    "solver.eps" => cfg.solver.eps = parse_num(value, "solver.eps")?,
                    "solver.max_iter" => cfg.solver.max_iter = parse_int(value, "solver.max_iter")?,
                    "solver.over_relaxation" => cfg.solver.over_relaxation = parse_num(value, "solver.over_relaxation")?,
                    "solver.penalty" => cfg.solver.penalty = parse_num(value, "solver.penalty")?,
                    "solver.scaling" => cfg.solver.scaling = parse_int(value, "solver.scaling")?,
                    "output" => cfg.output = Some(PathBuf::from(value)),
                    "bundle" => cfg.bundle = Some(PathBuf::from(value)),
                    k if k.starts_with("method.") => {
                        let m = cfg
                            .methods
                            .last_mut()
                            .ok_or_else(|| Error::Config(format!("'{k}' before any 'method ='")))?;
                        m.set(&k["method.".len()..], value)?;
                    }
                    k if k.starts_with("dgp.") => {
                        dgp_opts.insert(k["dgp.".len()..].to_string(), value.to_string());
                    }
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            })();
            r.map_err(at)?;
        }
        cfg.source = match input {
            Some(p) => DataSource::File(p),
            None => DataSource::Dgp(parse_dgp(&dgp, noise, &dgp_opts)?),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A simulation design by name (`quadratic`, `linear`, `rkhs`) with its
/// `dgp.*` options.
pub fn parse_dgp(name: &str, noise: Noise, opts: &BTreeMap<String, String>) -> Result<DgpKind> {
    let get = |k: &str| opts.get(k).map(String::as_str);
    let allowed: &[&str] = match name {
        "quadratic" => &[],
        "linear" => &["intercept", "slope", "variance"],
        "rkhs" => &["mean_kernel", "var_kernel", "centers", "floor"],
        _ => return Err(Error::Config(format!("unknown dgp '{name}' (quadratic, linear, rkhs)"))),
    };
    if let Some(k) = opts.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::Config(format!("dgp '{name}' has no option '{k}'")));
    }
    let kernel = |k: &str, default: KernelSpec| -> Result<KernelSpec> {
        match get(k) {
            None => Ok(default),
            Some(s) => match s.parse::<KernelChoice>()? {
                KernelChoice::Fixed(spec) => Ok(spec),
                KernelChoice::RbfMedian => Err(Error::Config(format!("dgp.{k} needs an explicit rbf bandwidth"))),
            },
        }
    };
    Ok(match name {
        "quadratic" => DgpKind::QuadraticVariance { noise },
        "linear" => {
            let DgpKind::LinearMeanQuadVar {
                intercept,
                slope,
                variance,
                ..
            } = DgpKind::linear_default(noise)
            else {
                unreachable!()
            };
            let variance = match get("variance") {
                Some(s) => {
                    let v = parse_list(s, "dgp.variance")?;
                    <[f64; 3]>::try_from(v).map_err(|_| Error::Config("dgp.variance needs 3 coefficients".into()))?
                }
                None => variance,
            };
            DgpKind::LinearMeanQuadVar {
                intercept: get("intercept").map(|s| parse_num(s, "dgp.intercept")).transpose()?.unwrap_or(intercept),
                slope: get("slope").map(|s| parse_num(s, "dgp.slope")).transpose()?.unwrap_or(slope),
                variance,
                noise,
            }
        }
        _ => DgpKind::RkhsMeanVar {
            mean_kernel: kernel("mean_kernel", KernelSpec::Rbf { bandwidth: 0.5 })?,
            var_kernel: kernel("var_kernel", KernelSpec::Rbf { bandwidth: 0.5 })?,
            centers: get("centers").map(|s| parse_int(s, "dgp.centers")).transpose()?.unwrap_or(5),
            variance_floor: get("floor").map(|s| parse_num(s, "dgp.floor")).transpose()?.unwrap_or(0.1),
            noise,
        },
    })
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        text.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.train == 0 || self.calib == 0 || self.test == 0 {
            return Err(Error::Config("train, calib and test sizes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("empty seed list".into()));
        }
        if !(self.gamma >= 0.0) || self.gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config("gamma values must be finite and nonnegative".into()));
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        let mut labels = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !labels.insert(&m.label) {
                return Err(Error::Config(format!("duplicate method label '{}'", m.label)));
            }
            if matches!(m.gamma, Some(g) if !(g >= 0.0) || !g.is_finite()) {
                return Err(Error::Config(format!("{}: gamma must be finite and nonnegative", m.label)));
            }
            if m.kind == MethodKind::FullConformal && m.grid_points < 2 {
                return Err(Error::Config(format!("{}: grid_points must be at least 2", m.label)));
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        let source = match &self.source {
            DataSource::Dgp(k) => json!({ "dgp": k }),
            DataSource::File(p) => json!({ "input": p.display().to_string() }),
        };
        json!({
            "source": source,
            "methods": self.methods.iter().map(MethodConfig::echo).collect::<Vec<_>>(),
            "gamma": self.gamma,
            "gammas": self.gammas,
            "alpha": self.alpha,
            "sizes": [self.train, self.calib, self.test],
            "seeds": self.seeds,
            "solver": self.solver,
        })
    }

    fn total(&self) -> usize {
        self.train + self.calib + self.test
    }
}

/// The full labeled pool for one seed: generated, or the input file
/// shuffled with that seed.
fn seed_pool(source: &DataSource, file: Option<&LabeledDataset>, n: usize, seed: u64) -> Result<LabeledDataset> {
    match source {
        DataSource::Dgp(kind) => generate(&DgpSpec {
            kind: kind.clone(),
            n,
            seed,
        }),
        DataSource::File(_) => {
            let data = file.expect("file input loaded");
            if data.len() < n {
                return Err(Error::Data(format!("input has {} rows, {n} needed", data.len())));
            }
            let mut idx: Vec<usize> = (0..data.len()).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(STREAM_SHUFFLE);
            idx.shuffle(&mut rng);
            Ok(data.select(&idx[..n]))
        }
    }
}

fn load_input(source: &DataSource) -> Result<Option<LabeledDataset>> {
    match source {
        DataSource::Dgp(_) => Ok(None),
        DataSource::File(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))?;
            Ok(Some(LabeledDataset::read_csv(f)?.0))
        }
    }
}

/// Test-set predictions of one fitted method.
struct Predictions {
    intervals: Vec<Option<PredictionInterval>>,
    means: Vec<f64>,
    opt_n: Option<f64>,
    delta_star: Option<f64>,
}

/// The band program of an SDP method, with kernels resolved on `train`.
pub fn problem_spec(m: &MethodConfig, gamma: f64, train: &LabeledDataset) -> Result<BandProblemSpec> {
    let var_kernel = m.var_kernel.resolve(&train.xs);
    let mean_kernel = m.mean_kernel.resolve(&train.xs);
    let spec = match m.kind {
        MethodKind::SdpFixed => {
            let m0 = match m.m0 {
                MeanChoice::Zero => MeanFunction::Zero,
                MeanChoice::Constant(value) => MeanFunction::Constant { value },
                MeanChoice::Ols => {
                    let f = LeastSquares.fit(&train.xs, &train.ys)?;
                    MeanFunction::Affine {
                        intercept: f.intercept,
                        weights: f.weights,
                    }
                }
            };
            BandProblemSpec::fixed_mean(m0, var_kernel)
        }
        MethodKind::SdpSimultaneous => BandProblemSpec::simultaneous(gamma, mean_kernel, var_kernel),
        MethodKind::SdpSvr => BandProblemSpec::svr(gamma, mean_kernel, var_kernel),
        _ => return Err(Error::Config(format!("{} is not an SDP method", m.label))),
    };
    spec.validate().map_err(|e| Error::Config(format!("{}: {e}", m.label)))?;
    Ok(spec)
}

/// Fits an SDP band on `train` and calibrates `δ` on `calib`.
fn fit_calibrated(
    m: &MethodConfig,
    gamma: f64,
    train: &LabeledDataset,
    calib: &LabeledDataset,
    alpha: f64,
    solver: &SolverSettings,
) -> Result<(BandModel, f64)> {
    let spec = problem_spec(m, gamma, train)?;
    let model = fit(&spec, &train.xs, &train.ys, solver)?;
    let cal = calibrate(&model, &calib.xs, &calib.ys, alpha, m.delta_max)?;
    Ok((model, cal.delta_star))
}

fn sdp_band(model: &BandModel, delta: f64, xs: &CovariateSet) -> Result<(Vec<Option<PredictionInterval>>, Vec<f64>)> {
    let mut intervals = Vec::with_capacity(xs.len());
    let mut means = Vec::with_capacity(xs.len());
    for x in xs.rows() {
        let (mu, v) = model.moments_at(x)?;
        intervals.push(Some(band_from_moments(mu, v, delta)));
        means.push(mu);
    }
    Ok((intervals, means))
}

fn run_method(
    m: &MethodConfig,
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    calib: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Predictions> {
    let gamma = m.gamma.unwrap_or(cfg.gamma);
    match m.kind {
        MethodKind::Slr => {
            if train.xs.dim() != 1 {
                return Err(Error::Config(format!("{}: slr needs one covariate", m.label)));
            }
            let s = slr_fit(&train.xs, &train.ys)?;
            let xs = test.xs.first_coords();
            Ok(Predictions {
                intervals: xs.iter().map(|&x| Some(slr_interval(&s, x))).collect(),
                means: xs.iter().map(|&x| s.predict(x)).collect(),
                opt_n: None,
                delta_star: None,
            })
        }
        k if k.is_sdp() => {
            let (model, delta) = fit_calibrated(m, gamma, train, calib, cfg.alpha, &cfg.solver)?;
            let (intervals, means) = sdp_band(&model, delta, &test.xs)?;
            Ok(Predictions {
                intervals,
                means,
                opt_n: Some(model.opt_n),
                delta_star: Some(delta),
            })
        }
        MethodKind::SplitConformal => {
            let band = split_conformal((&train.xs, &train.ys), (&calib.xs, &calib.ys), cfg.alpha, &LeastSquares)?;
            Ok(Predictions {
                intervals: test.xs.rows().map(|x| Some(band.interval(x))).collect(),
                means: test.xs.rows().map(|x| band.predictor.predict(x)).collect(),
                opt_n: None,
                delta_star: None,
            })
        }
        _ => {
            // all labeled non-test data
            let xs = train.xs.concat(&calib.xs)?;
            let ys: Vec<f64> = train.ys.iter().chain(&calib.ys).copied().collect();
            let grid = default_y_grid(&ys, m.grid_points)?;
            let band = full_conformal((&xs, &ys), &test.xs, &grid, cfg.alpha, &LeastSquares)?;
            let f = LeastSquares.fit(&xs, &ys)?;
            Ok(Predictions {
                intervals: band.intervals,
                means: test.xs.rows().map(|x| f.predict(x)).collect(),
                opt_n: None,
                delta_star: None,
            })
        }
    }
}

/// Metrics of one (method, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub coverage: f64,
    pub median_len: f64,
    pub mean_len: f64,
    /// Absent when the data carry no true mean.
    pub mse: Option<f64>,
    pub opt_n: Option<f64>,
    pub delta_star: Option<f64>,
}

fn score(p: &Predictions, test: &LabeledDataset) -> Result<SeedMetrics> {
    let n = test.len();
    let hits = p
        .intervals
        .iter()
        .zip(&test.ys)
        .filter(|(i, y)| i.is_some_and(|i| i.contains(**y)))
        .count();
    // an empty full-conformal set counts as a zero-length miss
    let lengths: Vec<f64> = p.intervals.iter().map(|i| i.map_or(0.0, |i| i.length())).collect();
    let len = length_stats_of(&lengths)?;
    let mse = test.truth.as_ref().map(|t| {
        test.xs
            .rows()
            .zip(&p.means)
            .map(|(x, m)| (m - t.mean(x[0])).powi(2))
            .sum::<f64>()
            / n as f64
    });
    Ok(SeedMetrics {
        coverage: hits as f64 / n as f64,
        median_len: len.median,
        mean_len: len.mean,
        mse,
        opt_n: p.opt_n,
        delta_star: p.delta_star,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub label: String,
    pub kind: MethodKind,
    pub seed: u64,
    pub outcome: std::result::Result<SeedMetrics, String>,
    pub wall_seconds: f64,
}

/// Mean over the seeds that succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub label: String,
    pub kind: MethodKind,
    pub succeeded: usize,
    pub excluded: usize,
    pub metrics: Option<SeedMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// Ordered by method (config order), then seed (config order).
    pub runs: Vec<MethodRun>,
    pub aggregates: Vec<Aggregate>,
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn aggregate(label: &str, kind: MethodKind, runs: &[&MethodRun]) -> Aggregate {
    let ok: Vec<&SeedMetrics> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let opt_mean = |f: &dyn Fn(&SeedMetrics) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = ok.iter().map(|m| f(m)).collect();
        v.map(|v| mean_of(&v))
    };
    let metrics = (!ok.is_empty()).then(|| SeedMetrics {
        coverage: mean_of(&ok.iter().map(|m| m.coverage).collect::<Vec<_>>()),
        median_len: mean_of(&ok.iter().map(|m| m.median_len).collect::<Vec<_>>()),
        mean_len: mean_of(&ok.iter().map(|m| m.mean_len).collect::<Vec<_>>()),
        mse: opt_mean(&|m| m.mse),
        opt_n: opt_mean(&|m| m.opt_n),
        delta_star: opt_mean(&|m| m.delta_star),
    });
    Aggregate {
        label: label.to_string(),
        kind,
        succeeded: ok.len(),
        excluded: runs.len() - ok.len(),
        metrics,
    }
}

/// Runs every method on every seed. A failure is recorded on its row and the
/// batch continues.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods configured".into()));
    }
    let file = load_input(&cfg.source)?;
    let mut per_seed: Vec<Vec<MethodRun>> = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let parts = seed_pool(&cfg.source, file.as_ref(), cfg.total(), seed)
            .and_then(|pool| pool.split(&[cfg.train, cfg.calib, cfg.test]));
        let runs = cfg
            .methods
            .iter()
            .map(|m| {
                let t0 = Instant::now();
                let outcome = match &parts {
                    Ok(p) => run_method(m, cfg, &p[0], &p[1], &p[2]).and_then(|pred| score(&pred, &p[2])),
                    Err(e) => Err(Error::Data(e.to_string())),
                };
                if let Err(e) = &outcome {
                    log::warn!("{} seed {seed}: {e}", m.label);
                }
                MethodRun {
                    label: m.label.clone(),
                    kind: m.kind,
                    seed,
                    outcome: outcome.map_err(|e| e.to_string()),
                    wall_seconds: t0.elapsed().as_secs_f64(),
                }
            })
            .collect();
        per_seed.push(runs);
    }
    let mut runs = Vec::with_capacity(cfg.methods.len() * cfg.seeds.len());
    for j in 0..cfg.methods.len() {
        for seed_runs in &per_seed {
            runs.push(seed_runs[j].clone());
        }
    }
    let aggregates = cfg
        .methods
        .iter()
        .map(|m| {
            let mine: Vec<&MethodRun> = runs.iter().filter(|r| r.label == m.label).collect();
            aggregate(&m.label, m.kind, &mine)
        })
        .collect();
    Ok(CompareReport { runs, aggregates })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn metric_cells(m: Option<&SeedMetrics>) -> [String; 6] {
    match m {
        Some(m) => [
            m.coverage.to_string(),
            m.median_len.to_string(),
            m.mean_len.to_string(),
            opt_cell(m.mse),
            opt_cell(m.opt_n),
            opt_cell(m.delta_star),
        ],
        None => Default::default(),
    }
}

pub const COMPARE_HEADER: [&str; 11] = [
    "method",
    "kind",
    "seed",
    "status",
    "coverage",
    "median_len",
    "mean_len",
    "mse",
    "opt_n",
    "delta_star",
    "note",
];

impl CompareReport {
    /// One row per (method, seed), then one `mean` row per method. Timings are
    /// kept out so equal configs give equal bytes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COMPARE_HEADER)?;
        for r in &self.runs {
            let (status, note) = match &r.outcome {
                Ok(_) => ("ok", String::new()),
                Err(e) => ("failed", e.clone()),
            };
            let cells = metric_cells(r.outcome.as_ref().ok());
            let mut rec = vec![r.label.clone(), r.kind.to_string(), r.seed.to_string(), status.into()];
            rec.extend(cells);
            rec.push(note);
            out.write_record(&rec)?;
        }
        for a in &self.aggregates {
            let status = if a.metrics.is_some() { "mean" } else { "failed" };
            let mut rec = vec![a.label.clone(), a.kind.to_string(), "mean".into(), status.into()];
            rec.extend(metric_cells(a.metrics.as_ref()));
            rec.push(format!("seeds={} excluded={}", a.succeeded, a.excluded));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// Config echo, crate version and per-run timings.
    pub fn bundle(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        json!({
            "tool": "hetband",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg.echo(),
            "runs": self.runs.iter().map(|r| json!({
                "method": r.label,
                "seed": r.seed,
                "ok": r.outcome.is_ok(),
                "wall_seconds": r.wall_seconds,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn aggregate(&self, label: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.label == label)
    }
}

/// Train/valid/test sizes in proportion 1:3:9.
pub fn sweep_split(total: usize) -> Result<[usize; 3]> {
    let train = total / 13;
    let valid = 3 * total / 13;
    if train == 0 {
        return Err(Error::Config(format!("{total} points cannot be split 1:3:9")));
    }
    Ok([train, valid, total - train - valid])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub valid_coverage: Option<f64>,
    pub valid_median_len: Option<f64>,
    /// `⟨α̂, K^m α̂⟩`.
    pub mean_norm: Option<f64>,
    /// `Tr(K^v B̂)`.
    pub variance_term: Option<f64>,
    pub delta_star: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub coverage: f64,
    pub median_len: f64,
    pub mean_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    /// Ascending in `γ`.
    pub rows: Vec<SweepRow>,
    pub selected_gamma: Option<f64>,
    /// Set when no `γ` reached the target coverage on the validation split.
    pub warning: bool,
    pub test: Option<TestMetrics>,
}

/// Smallest validation median length among rows meeting `target` coverage,
/// ties to the smaller `γ`; without any such row, the best coverage.
pub fn select_gamma(rows: &[SweepRow], target: f64) -> Option<(f64, bool)> {
    let ok: Vec<(&SweepRow, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r, r.valid_coverage?, r.valid_median_len?)))
        .collect();
    let by_gamma = |a: &SweepRow, b: &SweepRow| a.gamma.total_cmp(&b.gamma);
    let feasible = ok
        .iter()
        .filter(|(_, c, _)| *c >= target)
        .min_by(|a, b| a.2.total_cmp(&b.2).then(by_gamma(a.0, b.0)));
    if let Some((r, _, _)) = feasible {
        return Some((r.gamma, false));
    }
    ok.iter()
        .min_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)).then(by_gamma(a.0, b.0)))
        .map(|(r, _, _)| (r.gamma, true))
}

/// For each `γ` in the grid: fit on train, calibrate `δ` and score on the
/// validation split. The selected `γ` is then scored on the test split.
pub fn run_gamma_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    let method = cfg
        .methods
        .iter()
        .find(|m| m.kind.learns_mean())
        .cloned()
        .unwrap_or_else(|| MethodConfig::new(MethodKind::SdpSimultaneous));
    let mut grid = cfg.gammas.clone();
    if grid.is_empty() {
        return Err(Error::Config("empty gamma grid".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let file = load_input(&cfg.source)?;
    let total = match &file {
        Some(f) => f.len(),
        None => cfg.total(),
    };
    let sizes = sweep_split(total)?;
    let target = 1.0 - cfg.alpha;
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let parts = seed_pool(&cfg.source, file.as_ref(), total, seed)?.split(&sizes)?;
        let (train, valid, test) = (&parts[0], &parts[1], &parts[2]);
        let mut rows = Vec::with_capacity(grid.len());
        let mut fitted: Vec<Option<(BandModel, f64)>> = Vec::with_capacity(grid.len());
        for &gamma in &grid {
            let res = fit_calibrated(&method, gamma, train, valid, cfg.alpha, &cfg.solver).and_then(|(model, delta)| {
                let (iv, _) = sdp_band(&model, delta, &valid.xs)?;
                let p = Predictions {
                    intervals: iv,
                    means: vec![0.0; valid.len()],
                    opt_n: None,
                    delta_star: None,
                };
                let s = score(&p, valid)?;
                Ok((model, delta, s))
            });
            match res {
                Ok((model, delta, s)) => {
                    rows.push(SweepRow {
                        gamma,
                        valid_coverage: Some(s.coverage),
                        valid_median_len: Some(s.median_len),
                        mean_norm: Some(if gamma > 0.0 { model.mean_term / gamma } else { 0.0 }),
                        variance_term: Some(model.opt_n),
                        delta_star: Some(delta),
                        error: None,
                    });
                    fitted.push(Some((model, delta)));
                }
                Err(e) => {
                    log::warn!("seed {seed} gamma {gamma}: {e}");
                    rows.push(SweepRow {
                        gamma,
                        valid_coverage: None,
                        valid_median_len: None,
                        mean_norm: None,
                        variance_term: None,
                        delta_star: None,
                        error: Some(e.to_string()),
                    });
                    fitted.push(None);
                }
            }
        }
        let choice = select_gamma(&rows, target);
        let test_metrics = match choice {
            Some((g, _)) => {
                let j = rows.iter().position(|r| r.gamma == g).expect("selected from rows");
                let (model, delta) = fitted[j].as_ref().expect("selected rows were fitted");
                let (iv, means) = sdp_band(model, *delta, &test.xs)?;
                let s = score(
                    &Predictions {
                        intervals: iv,
                        means,
                        opt_n: None,
                        delta_star: None,
                    },
                    test,
                )?;
                Some(TestMetrics {
                    coverage: s.coverage,
                    median_len: s.median_len,
                    mean_len: s.mean_len,
                })
            }
            None => None,
        };
        if choice.is_none_or(|(_, w)| w) {
            log::warn!("seed {seed}: no gamma reached validation coverage {target}");
        }
        out.push(SweepResult {
            seed,
            rows,
            selected_gamma: choice.map(|c| c.0),
            warning: choice.is_none_or(|(_, w)| w),
            test: test_metrics,
        });
    }
    Ok(out)
}

pub const SWEEP_HEADER: [&str; 13] = [
    "seed",
    "gamma",
    "valid_coverage",
    "valid_median_len",
    "mean_norm",
    "variance_term",
    "delta_star",
    "selected",
    "warning",
    "test_coverage",
    "test_median_len",
    "test_mean_len",
    "note",
];

pub fn write_sweep_csv<W: Write>(results: &[SweepResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in results {
        for row in &r.rows {
            let selected = r.selected_gamma == Some(row.gamma);
            let test = r.test.as_ref().filter(|_| selected);
            out.write_record([
                r.seed.to_string(),
                row.gamma.to_string(),
                opt_cell(row.valid_coverage),
                opt_cell(row.valid_median_len),
                opt_cell(row.mean_norm),
                opt_cell(row.variance_term),
                opt_cell(row.delta_star),
                selected.to_string(),
                r.warning.to_string(),
                opt_cell(test.map(|t| t.coverage)),
                opt_cell(test.map(|t| t.median_len)),
                opt_cell(test.map(|t| t.mean_len)),
                row.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    /// Dates `YYYYMM`.
    Monthly,
    /// Dates `YYYY`.
    Yearly,
}

impl Frequency {
    fn date_digits(self) -> usize {
        match self {
            Frequency::Monthly => 6,
            Frequency::Yearly => 4,
        }
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monthly" => Ok(Frequency::Monthly),
            "yearly" | "annual" => Ok(Frequency::Yearly),
            _ => Err(Error::Config(format!("unknown frequency '{s}' (monthly, yearly)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorColumn {
    Mkt,
    Smb,
    Hml,
    Rf,
}

impl FactorColumn {
    pub const ALL: [FactorColumn; 4] = [FactorColumn::Mkt, FactorColumn::Smb, FactorColumn::Hml, FactorColumn::Rf];

    fn index(self) -> usize {
        self as usize
    }

    /// Header spellings accepted for the column.
    fn matches(self, header: &str) -> bool {
        let h = header.trim().to_ascii_uppercase();
        match self {
            FactorColumn::Mkt => h == "MKT" || h == "MKT-RF" || h == "MKT_RF",
            FactorColumn::Smb => h == "SMB",
            FactorColumn::Hml => h == "HML",
            FactorColumn::Rf => h == "RF",
        }
    }
}

impl FromStr for FactorColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FactorColumn::ALL
            .into_iter()
            .find(|c| c.matches(s))
            .ok_or_else(|| Error::Config(format!("unknown factor column '{s}' (mkt, smb, hml, rf)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub date: u32,
    /// MKT, SMB, HML, RF in percent.
    pub values: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub frequency: Frequency,
    pub rows: Vec<FactorRow>,
}

impl FactorTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, c: FactorColumn) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[c.index()]).collect()
    }
}

/// Reads a factor file: a header line naming the columns (date first, then
/// MKT or Mkt-RF, SMB, HML, RF in any order), then `date,values…` rows.
/// Rows whose date width does not match `frequency` belong to another section
/// and are skipped, as are blank and free-text lines. Later header lines
/// restate the column order for the rows after them.
pub fn read_factors<R: Read>(r: R, frequency: Frequency) -> Result<FactorTable> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)
        .map_err(|e| Error::Data(format!("factor file is not readable text: {e}")))?;
    let mut layout: Option<[usize; 4]> = None;
    let mut rows: Vec<FactorRow> = Vec::new();
    // one line at a time so reported line numbers count blank lines too
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(raw.as_bytes());
        let rec = match rd.records().next() {
            Some(rec) => rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?,
            None => continue,
        };
        let first = rec.get(0).unwrap_or("");
        let is_date = !first.is_empty() && first.bytes().all(|b| b.is_ascii_digit());
        if !is_date {
            // a header names at least one factor column; anything else is text
            if rec.iter().skip(1).any(|h| FactorColumn::ALL.iter().any(|c| c.matches(h))) {
                let mut idx = [0usize; 4];
                for c in FactorColumn::ALL {
                    idx[c.index()] = rec
                        .iter()
                        .position(|h| c.matches(h))
                        .ok_or_else(|| Error::Data(format!("line {line}: header lacks column {c:?}")))?;
                }
                layout = Some(idx);
            }
            continue;
        }
        if first.len() != frequency.date_digits() {
            continue;
        }
        let idx = layout.ok_or_else(|| Error::Data(format!("line {line}: data row before any header")))?;
        let date: u32 = first
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: bad date '{first}'")))?;
        let mut values = [0.0; 4];
        for c in FactorColumn::ALL {
            let cell = rec
                .get(idx[c.index()])
                .ok_or_else(|| Error::Data(format!("line {line}: missing column {c:?}")))?;
            values[c.index()] = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("line {line}: column {c:?} is not a number: '{cell}'")))?;
        }
        if let Some(prev) = rows.last() {
            if date <= prev.date {
                return Err(Error::Data(format!("line {line}: date {date} does not follow {}", prev.date)));
            }
        }
        rows.push(FactorRow { date, values });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("no {frequency:?} rows found")));
    }
    Ok(FactorTable { frequency, rows })
}

pub fn ingest_factors(path: &std::path::Path, frequency: Frequency) -> Result<FactorTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let t = read_factors(f, frequency)?;
    log::info!("{}: {} {:?} rows", path.display(), t.len(), frequency);
    Ok(t)
}

/// `(x − mean) / sd` with the sample (`n − 1`) standard deviation.
pub fn standardize(tbl: &FactorTable, column: FactorColumn) -> Result<Vec<f64>> {
    standardize_values(&tbl.column(column))
}

pub fn standardize_values(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::Data("standardizing needs at least 2 values".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Data("column has zero variance".into()));
    }
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Standardized `x` and `y` factor columns as a dataset.
pub fn factor_dataset(tbl: &FactorTable, x: FactorColumn, y: FactorColumn) -> Result<LabeledDataset> {
    let xs = standardize(tbl, x)?;
    let ys = standardize(tbl, y)?;
    LabeledDataset::new(CovariateSet::from_scalars(&xs)?, ys, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_defaults() {
        let cfg: ExperimentConfig = "
            # desk-scale run
            alpha = 0.1
            seeds = 3..6
            method = sdp-simultaneous
            method.var_kernel = rbf
            method.gamma = 1
            method = slr
            method.label = line
        "
        .parse()
        .unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.seeds, vec![3, 4, 5]);
        assert_eq!(cfg.methods.len(), 2);
        assert_eq!(cfg.methods[0].var_kernel, KernelChoice::RbfMedian);
        assert_eq!(cfg.methods[0].gamma, Some(1.0));
        assert_eq!(cfg.methods[1].label, "line");
        assert_eq!((cfg.train, cfg.calib, cfg.test), (50, 50, 500));
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = "alpha = 0.1\nmethod.gamma = 2\n".parse::<ExperimentConfig>().unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!("method = lasso".parse::<ExperimentConfig>().is_err());
        assert!("alpha = 1.5".parse::<ExperimentConfig>().is_err());
        assert!("method = slr\nmethod = slr".parse::<ExperimentConfig>().is_err());
        assert!("dgp = quadratic\ndgp.slope = 2".parse::<ExperimentConfig>().is_err());
    }

    #[test]
    fn slr_on_noiseless_line_covers_with_zero_length() {
        let cfg: ExperimentConfig = "
            dgp = linear
            dgp.variance = 0, 0, 0
            dgp.slope = 2
            train = 10
            calib = 5
            test = 20
            seeds = 1,2
            method = slr
        "
        .parse()
        .unwrap();
        let rep = run_compare(&cfg).unwrap();
        for r in &rep.runs {
            let m = r.outcome.as_ref().unwrap();
            assert_eq!(m.coverage, 1.0);
            assert!(m.median_len.abs() < 1e-12 && m.mean_len.abs() < 1e-12);
            assert!(m.mse.unwrap() < 1e-20);
        }
        let a = rep.aggregate("slr").unwrap();
        assert_eq!((a.succeeded, a.excluded), (2, 0));
    }

    #[test]
    fn failures_are_marked_and_excluded() {
        // a one-point training split is too small for SLR
        let cfg: ExperimentConfig = "alpha = 0.4\ntrain = 1\ncalib = 5\ntest = 5\nseeds = 0,1\nmethod = slr\nmethod = split-conformal"
            .parse()
            .unwrap();
        let rep = run_compare(&cfg).unwrap();
        assert!(rep.runs.iter().filter(|r| r.kind == MethodKind::Slr).all(|r| r.outcome.is_err()));
        let a = rep.aggregate("slr").unwrap();
        assert_eq!((a.succeeded, a.excluded), (0, 2));
        assert_eq!(rep.aggregate("split-conformal").unwrap().succeeded, 2);
        let csv = rep.to_csv_string().unwrap();
        assert!(csv.contains("slr,slr,0,failed"));
        assert!(csv.contains("seeds=0 excluded=2"));
    }

    #[test]
    fn gamma_selection_rule() {
        let row = |gamma: f64, cov: f64, len: f64| SweepRow {
            gamma,
            valid_coverage: Some(cov),
            valid_median_len: Some(len),
            mean_norm: None,
            variance_term: None,
            delta_star: None,
            error: None,
        };
        let rows = vec![row(0.1, 0.96, 5.0), row(1.0, 0.97, 4.0), row(10.0, 0.90, 3.0)];
        assert_eq!(select_gamma(&rows, 0.95), Some((1.0, false)));
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(select_gamma(&rev, 0.95), Some((1.0, false)));
        // tie on length goes to the smaller gamma
        let tie = vec![row(5.0, 0.99, 4.0), row(2.0, 0.99, 4.0)];
        assert_eq!(select_gamma(&tie, 0.95), Some((2.0, false)));
        // nothing feasible: best coverage with a warning
        assert_eq!(select_gamma(&rows, 0.99), Some((1.0, true)));
        assert_eq!(select_gamma(&[row(3.0, 0.5, 1.0)], 0.95), Some((3.0, true)));
    }

    #[test]
    fn sweep_split_proportions() {
        assert_eq!(sweep_split(130).unwrap(), [10, 30, 90]);
        assert_eq!(sweep_split(600).unwrap(), [46, 138, 416]);
        assert!(sweep_split(12).is_err());
    }

    #[test]
    fn factor_parsing() {
        let text = "\
Some preamble text
,Mkt-RF,SMB,HML,RF
192607,2.96,-2.56,-2.43,0.22
192608,2.64,-1.17,3.82,0.25

 Annual Factors: January-December
,Mkt-RF,SMB,HML,RF
1927,29.47,-2.46,-3.75,3.12
";
        let m = read_factors(text.as_bytes(), Frequency::Monthly).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[1].values, [2.64, -1.17, 3.82, 0.25]);
        let y = read_factors(text.as_bytes(), Frequency::Yearly).unwrap();
        assert_eq!(y.len(), 1);
        assert_eq!(y.rows[0].date, 1927);
        let reordered = "date,RF,HML,SMB,MKT\n2001,1,2,3,4\n";
        let t = read_factors(reordered.as_bytes(), Frequency::Yearly).unwrap();
        assert_eq!(t.rows[0].values, [4.0, 3.0, 2.0, 1.0]);
        assert!(read_factors("date,MKT,SMB,HML\n2001,1,2,3\n".as_bytes(), Frequency::Yearly).is_err());
        assert!(read_factors("date,MKT,SMB,HML,RF\n2002,1,2,3,4\n2001,1,2,3,4\n".as_bytes(), Frequency::Yearly).is_err());
    }

    #[test]
    fn standardize_examples() {
        let z = standardize_values(&[0.0, 2.0]).unwrap();
        let h = 1.0 / 2.0_f64.sqrt();
        assert!((z[0] + h).abs() < 1e-15 && (z[1] - h).abs() < 1e-15);
        let again = standardize_values(&z).unwrap();
        assert!(again.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(standardize_values(&[1.0, 1.0]).is_err());
        assert!(standardize_values(&[1.0]).is_err());
    }
}
