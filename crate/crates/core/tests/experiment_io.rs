use std::path::PathBuf;

use hetband::experiment::{
    ingest_factors, read_factors, run_compare, run_gamma_sweep, standardize, standardize_values, ExperimentConfig,
    FactorColumn, Frequency,
};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/factors_synthetic.csv")
}

#[test]
fn fixture_ingests_by_frequency() {
    let m = ingest_factors(&fixture(), Frequency::Monthly).unwrap();
    assert_eq!(m.len(), 20);
    assert_eq!(m.rows[0].date, 200101);
    assert_eq!(m.rows[0].values, [-2.11, -2.09, 0.91, 0.04]);
    assert_eq!(m.rows[19].date, 200208);
    let y = ingest_factors(&fixture(), Frequency::Yearly).unwrap();
    assert_eq!(y.len(), 2);
    assert_eq!(y.rows[1].values, [-22.76, 4.43, 3.91, 1.65]);
}

#[test]
fn fixture_standardizes_exactly() {
    let m = ingest_factors(&fixture(), Frequency::Monthly).unwrap();
    for c in FactorColumn::ALL {
        let raw = m.column(c);
        let z = standardize(&m, c).unwrap();
        // recompute from first principles
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        for (a, b) in z.iter().zip(&raw) {
            assert!((a - (b - mean) / sd).abs() <= 1e-12);
        }
    }
}

#[test]
fn bad_cell_reports_its_line() {
    let text = "header text\n,Mkt-RF,SMB,HML,RF\n200101,1,2,3,4\n200102,1,2,3,4\n200103,1,2,3,4\n\n200104,1,x,3,4\n";
    let e = read_factors(text.as_bytes(), Frequency::Monthly).unwrap_err().to_string();
    assert!(e.contains("line 7"), "{e}");
    let two = read_factors(",MKT,SMB,HML,RF\n2001,1,2,3,4\n2002,5,6,7,8\n".as_bytes(), Frequency::Yearly).unwrap();
    assert_eq!(two.len(), 2);
    let short = read_factors(",MKT,SMB,HML,RF\n2001,1,2,3\n".as_bytes(), Frequency::Yearly);
    assert!(short.is_err());
}

proptest! {
    #[test]
    fn standardized_moments(v in proptest::collection::vec(-50.0f64..50.0, 2..40)) {
        let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let z = standardize_values(&v).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!(mean.abs() <= 1e-12);
        prop_assert!((sd - 1.0).abs() <= 1e-12);
    }
}

const SMALL: &str = "
train = 20
calib = 20
test = 60
seeds = 0..3
alpha = 0.2
method = slr
method = sdp-simultaneous
method.gamma = 1
method = sdp-fixed
method.m0 = zero
method = split-conformal
method = full-conformal
method.grid_points = 41
";

#[test]
fn compare_is_deterministic() {
    let cfg: ExperimentConfig = SMALL.parse().unwrap();
    let a = run_compare(&cfg).unwrap().to_csv_string().unwrap();
    let b = run_compare(&cfg).unwrap().to_csv_string().unwrap();
    assert_eq!(a, b);
    // five methods × three seeds, five aggregates, one header
    assert_eq!(a.lines().count(), 1 + 15 + 5);
}

#[test]
fn gamma_sweep_selection() {
    let base = "train = 40\ncalib = 40\ntest = 50\nseeds = 2\nalpha = 0.2\n";
    let single: ExperimentConfig = format!("{base}gammas = 3").parse().unwrap();
    let r = run_gamma_sweep(&single).unwrap();
    assert_eq!(r[0].selected_gamma, Some(3.0));

    let fwd: ExperimentConfig = format!("{base}gammas = 0.1, 1, 10").parse().unwrap();
    let rev: ExperimentConfig = format!("{base}gammas = 10, 1, 0.1").parse().unwrap();
    let a = run_gamma_sweep(&fwd).unwrap();
    let b = run_gamma_sweep(&rev).unwrap();
    assert_eq!(a, b);
    // the mean norm falls and the variance term rises along the grid
    let rows = &a[0].rows;
    for w in rows.windows(2) {
        assert!(w[1].mean_norm.unwrap() <= w[0].mean_norm.unwrap() * (1.0 + 1e-3) + 1e-6);
        assert!(w[1].variance_term.unwrap() >= w[0].variance_term.unwrap() * (1.0 - 1e-3) - 1e-6);
    }
    assert!(a[0].test.is_some());
}
