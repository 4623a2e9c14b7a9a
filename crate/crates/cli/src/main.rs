//! `hetband` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 solver or
//! calibration failure, 4 data error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetband::calibrate::calibrate;
use hetband::conic::SolverSettings;
use hetband::dgp::{generate, DgpSpec, LabeledDataset};
use hetband::experiment::{
    ingest_factors, parse_dgp, parse_noise, problem_spec, run_compare, run_gamma_sweep, write_sweep_csv,
    ExperimentConfig, FactorColumn, Frequency, MeanChoice, MethodConfig, MethodKind,
};
use hetband::kernel::{CovariateSet, KernelChoice};
use hetband::sdpband::{band_from_moments, fit, BandModel};
use hetband::Error;

#[derive(Parser)]
#[command(name = "hetband", version, about = "Heteroscedastic prediction bands via semi-definite programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// quadratic, linear or rkhs
        #[arg(long, default_value = "quadratic")]
        dgp: String,
        /// gaussian or uniform
        #[arg(long, default_value = "gaussian")]
        noise: String,
        /// Design option as key=value (e.g. slope=2, variance=1,1,4)
        #[arg(long = "opt", value_name = "KEY=VALUE")]
        opts: Vec<String>,
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a band on a dataset and write the model as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// sdp-fixed, sdp-simultaneous or sdp-svr
        #[arg(long, default_value = "sdp-simultaneous")]
        method: String,
        #[arg(long, default_value = "linear")]
        mean_kernel: String,
        #[arg(long, default_value = "poly:2")]
        var_kernel: String,
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
        /// Fixed mean for sdp-fixed: zero, ols or constant:<v>
        #[arg(long, default_value = "ols")]
        m0: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate the band inflation δ on held-out data.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Upper end of the search (defaults to the smallest value covering every point)
        #[arg(long)]
        delta_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fitted band at covariates.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Dataset whose covariates are evaluated
        #[arg(long, conflicts_with = "x")]
        data: Option<PathBuf>,
        /// Scalar covariates, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method over the seed list.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's bundle
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Cross-validate γ on a 1:3:9 train/valid/test split.
    GammaSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read a factor file and write a standardized dataset.
    Ingest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = "yearly")]
        frequency: String,
        #[arg(long, default_value = "mkt")]
        x: String,
        #[arg(long, default_value = "smb")]
        y: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverSettings::default().eps)]
    eps: f64,
    #[arg(long, default_value_t = SolverSettings::default().max_iter)]
    max_iter: usize,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            eps: self.eps,
            max_iter: self.max_iter,
            ..SolverSettings::default()
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Solver(_)
        | Error::Calibration(_)
        | Error::NotPositiveDefinite { .. }
        | Error::EigNoConvergence { .. } => 3,
        Error::Data(_) | Error::DimensionMismatch { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
    }
}

fn sink(path: Option<&Path>) -> hetband::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Data(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_dataset(path: &Path) -> hetband::Result<LabeledDataset> {
    let f = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(LabeledDataset::read_csv(f)?.0)
}

fn read_model(path: &Path) -> hetband::Result<BandModel> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    BandModel::from_json(&s)
}

fn run(cmd: Command) -> hetband::Result<()> {
    match cmd {
        Command::Simulate {
            dgp,
            noise,
            opts,
            n,
            seed,
            out,
        } => {
            let mut map = BTreeMap::new();
            for o in &opts {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--opt '{o}' is not key=value")))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            let spec = DgpSpec {
                kind: parse_dgp(&dgp, parse_noise(&noise)?, &map)?,
                n,
                seed,
            };
            let data = generate(&spec)?;
            data.write_csv(Some(&spec), sink(out.as_deref())?)
        }
        Command::Fit {
            data,
            method,
            mean_kernel,
            var_kernel,
            gamma,
            m0,
            solver,
            out,
        } => {
            let kind: MethodKind = method.parse()?;
            let mut m = MethodConfig::new(kind);
            m.mean_kernel = mean_kernel.parse::<KernelChoice>()?;
            m.var_kernel = var_kernel.parse::<KernelChoice>()?;
            m.m0 = m0.parse::<MeanChoice>()?;
            let settings = solver.settings();
            settings.validate().map_err(|e| Error::Config(e.to_string()))?;
            let train = read_dataset(&data)?;
            let spec = problem_spec(&m, gamma, &train)?;
            let model = fit(&spec, &train.xs, &train.ys, &settings)?;
            log::info!(
                "fitted n = {}: objective {} in {} iterations",
                model.n_train(),
                model.opt_n,
                model.diagnostics.iterations
            );
            let mut w = sink(out.as_deref())?;
            writeln!(w, "{}", model.to_json()?)?;
            w.flush()?;
            Ok(())
        }
        Command::Calibrate {
            model,
            data,
            alpha,
            delta_max,
            out,
        } => {
            let model = read_model(&model)?;
            let calib = read_dataset(&data)?;
            let r = calibrate(&model, &calib.xs, &calib.ys, alpha, delta_max)?;
            let mut w = sink(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&r)?)?;
            w.flush()?;
            Ok(())
        }
        Command::Predict {
            model,
            data,
            x,
            delta,
            out,
        } => {
            if !(delta >= -1.0) {
                return Err(Error::Config(format!("delta must be at least -1, got {delta}")));
            }
            let model = read_model(&model)?;
            let xs = match data {
                Some(p) => read_dataset(&p)?.xs,
                None if x.is_empty() => return Err(Error::Config("give --data or --x".into())),
                None => CovariateSet::from_scalars(&x)?,
            };
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            let mut head: Vec<String> = (0..xs.dim()).map(|k| format!("x{k}")).collect();
            head.extend(["mean", "variance", "lower", "upper"].map(String::from));
            w.write_record(&head)?;
            for row in xs.rows() {
                let (m, v) = model.moments_at(row)?;
                let pi = band_from_moments(m, v, delta);
                let mut rec: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                rec.extend([m, v, pi.lower, pi.upper].map(|c| c.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            if model.clamp_events() > 0 {
                log::warn!("{} variance evaluations were clamped at zero", model.clamp_events());
            }
            Ok(())
        }
        Command::Compare { config, out, bundle } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let report = run_compare(&cfg)?;
            report.write_csv(sink(out.as_deref().or(cfg.output.as_deref()))?)?;
            if let Some(b) = bundle.as_deref().or(cfg.bundle.as_deref()) {
                let mut w = sink(Some(b))?;
                writeln!(w, "{}", serde_json::to_string_pretty(&report.bundle(&cfg))?)?;
                w.flush()?;
            }
            let failed = report.runs.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                log::warn!("{failed} of {} runs failed", report.runs.len());
            }
            Ok(())
        }
        Command::GammaSweep { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let results = run_gamma_sweep(&cfg)?;
            write_sweep_csv(&results, sink(out.as_deref().or(cfg.output.as_deref()))?)
        }
        Command::Ingest {
            file,
            frequency,
            x,
            y,
            out,
        } => {
            let freq: Frequency = frequency.parse()?;
            let (xc, yc): (FactorColumn, FactorColumn) = (x.parse()?, y.parse()?);
            let table = ingest_factors(&file, freq)?;
            eprintln!(
                "{} {frequency} rows, {} to {}",
                table.len(),
                table.rows[0].date,
                table.rows[table.len() - 1].date
            );
            let data = hetband::experiment::factor_dataset(&table, xc, yc)?;
            data.write_csv(None, sink(out.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
