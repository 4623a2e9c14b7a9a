use hetband::conic::{solve, SolverSettings, Status};
use hetband::kernel::{gram, CovariateSet, KernelSpec};
use hetband::linalg::SymMatrix;
use hetband::sdpband::{
    build, fit, fit_with, trivial_objective, BandModel, BandProblemSpec, FitOptions, MeanFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn random_data(seed: u64, n: usize, dim: usize) -> (CovariateSet, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let ys = rows
        .iter()
        .map(|r| r[0] + (1.0 + r[0] * r[0]).sqrt() * rng.random_range(-1.0..1.0))
        .collect();
    (CovariateSet::new(&rows).unwrap(), ys)
}

/// Dense Gaussian elimination, independent of the library's solvers.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

fn assert_feasible(model: &BandModel, ys: &[f64]) {
    let worst = model.max_training_violation(ys).unwrap();
    assert!(worst <= 1e-5, "training constraint violated by {worst:e}");
    let tr = model.b.trace().abs();
    assert!(model.b.min_eigenvalue().unwrap() >= -1e-6 * (1.0 + tr));
}

#[test]
fn single_point_fixed_mean() {
    let xs = CovariateSet::from_scalars(&[1.0]).unwrap();
    let spec = BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::Linear);
    for reduce in [false, true] {
        let m = fit_with(&spec, &xs, &[2.0], &settings(), FitOptions { reduce, polish: true }).unwrap();
        assert!((m.b.get(0, 0) - 4.0).abs() < 1e-6);
        assert!((m.opt_n - 4.0).abs() < 1e-6);
        assert!((m.variance_at(&[1.0]).unwrap() - 4.0).abs() < 1e-6);
    }
}

#[test]
fn min_norm_limit_at_zero_gamma() {
    let (xs, ys) = random_data(3, 8, 1);
    let rbf = KernelSpec::Rbf { bandwidth: 0.3 };
    let spec = BandProblemSpec::simultaneous(0.0, rbf, KernelSpec::polynomial(2));
    let m = fit(&spec, &xs, &ys, &settings()).unwrap();
    assert!(m.opt_n.abs() < 1e-5, "opt {}", m.opt_n);
    assert!(m.b.frobenius_norm() < 1e-4);
    for (x, y) in xs.rows().zip(&ys) {
        assert!((m.mean_at(x).unwrap() - y).abs() < 1e-3);
    }
}

#[test]
fn indicator_variance_reduces_to_kernel_ridge() {
    for seed in 0..3 {
        let (xs, ys) = random_data(10 + seed, 12, 2);
        let km_spec = KernelSpec::Rbf { bandwidth: 1.0 };
        for gamma in [0.1, 1.0, 5.0] {
            let spec = BandProblemSpec::simultaneous(gamma, km_spec, KernelSpec::Indicator);
            let m = fit(&spec, &xs, &ys, &settings()).unwrap();
            let km = gram(&km_spec, &xs);
            let n = xs.len();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| km.get(i, j) + if i == j { gamma } else { 0.0 }).collect())
                .collect();
            let oracle = gauss(a, ys.clone());
            let alpha = m.alpha.as_ref().unwrap();
            let scale = 1.0 + ys.iter().fold(0.0_f64, |a, y| a.max(y.abs()));
            let err = alpha.iter().zip(&oracle).fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
            assert!(err <= 1e-4 * scale, "seed {seed} gamma {gamma}: ‖Δα‖∞ = {err:e}");
            // held-out prediction
            let x = [0.3, -0.2];
            let k: Vec<f64> = xs.rows().map(|r| (-(r[0] - x[0]).powi(2) / 2.0 - (r[1] - x[1]).powi(2) / 2.0).exp()).collect();
            let pred: f64 = k.iter().zip(&oracle).map(|(a, b)| a * b).sum();
            assert!((m.mean_at(&x).unwrap() - pred).abs() < 1e-4);
            assert_feasible(&m, &ys);
        }
    }
}

#[test]
fn objective_bounded_by_trivial_point() {
    for seed in 0..4 {
        let (xs, ys) = random_data(20 + seed, 15, 1);
        let specs = [
            BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::polynomial(2)),
            BandProblemSpec::simultaneous(2.0, KernelSpec::Linear, KernelSpec::polynomial(2)),
            BandProblemSpec::simultaneous(1.0, KernelSpec::Linear, KernelSpec::Rbf { bandwidth: 0.5 }),
        ];
        for spec in &specs {
            let m = fit(spec, &xs, &ys, &settings()).unwrap();
            let bound = trivial_objective(spec, &xs, &ys).unwrap().unwrap();
            assert!(m.opt_n + m.mean_term <= bound * (1.0 + 1e-6), "{} > {bound}", m.opt_n);
            assert_feasible(&m, &ys);
        }
    }
}

#[test]
fn duplicating_data_keeps_the_optimum() {
    let (xs, ys) = random_data(7, 10, 1);
    let idx: Vec<usize> = (0..10).chain(0..10).collect();
    let xs2 = xs.select(&idx);
    let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    for spec in [
        BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::polynomial(2)),
        BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::Rbf { bandwidth: 0.7 }),
    ] {
        let a = fit(&spec, &xs, &ys, &settings()).unwrap();
        let b = fit(&spec, &xs2, &ys2, &settings()).unwrap();
        assert!((a.opt_n - b.opt_n).abs() <= 1e-4 * a.opt_n.abs().max(1.0), "{} vs {}", a.opt_n, b.opt_n);
    }
}

#[test]
fn reduced_and_full_forms_agree() {
    let (xs, ys) = random_data(5, 10, 1);
    for spec in [
        BandProblemSpec::fixed_mean(MeanFunction::Constant { value: 0.2 }, KernelSpec::polynomial(2)),
        BandProblemSpec::simultaneous(3.0, KernelSpec::Linear, KernelSpec::polynomial(2)),
        BandProblemSpec::svr(1.0, KernelSpec::Linear, KernelSpec::polynomial(2)),
    ] {
        let full = fit_with(&spec, &xs, &ys, &settings(), FitOptions { reduce: false, polish: true }).unwrap();
        let red = fit(&spec, &xs, &ys, &settings()).unwrap();
        let (fo, ro) = (full.opt_n + full.mean_term, red.opt_n + red.mean_term);
        assert!((fo - ro).abs() <= 1e-4 * (1.0 + fo.abs()), "{fo} vs {ro}");
        assert!(red.diagnostics.psd_side < full.diagnostics.psd_side);
        assert_feasible(&red, &ys);
    }
}

#[test]
fn contract_form_solves_to_the_same_value() {
    let (xs, ys) = random_data(9, 6, 1);
    let spec = BandProblemSpec::simultaneous(1.0, KernelSpec::Linear, KernelSpec::polynomial(2));
    let sol = solve(&build(&spec, &xs, &ys).unwrap(), &settings()).unwrap();
    assert_eq!(sol.status, Status::Solved);
    let m = fit(&spec, &xs, &ys, &settings()).unwrap();
    let total = m.opt_n + m.mean_term;
    assert!((sol.primal_objective - total).abs() <= 1e-4 * (1.0 + total), "{} vs {total}", sol.primal_objective);
}

#[test]
fn gamma_tradeoff_is_monotone() {
    let (xs, ys) = random_data(11, 14, 1);
    let mut prev: Option<(f64, f64)> = None;
    for gamma in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let spec = BandProblemSpec::simultaneous(gamma, KernelSpec::Linear, KernelSpec::polynomial(2));
        let m = fit(&spec, &xs, &ys, &settings()).unwrap();
        let (mean_norm, var) = (m.mean_term / gamma, m.opt_n);
        if let Some((pn, pv)) = prev {
            // ⟨α, K α⟩ falls and Tr(K B) rises as γ grows
            assert!(mean_norm <= pn + 1e-5 * (1.0 + pn), "{mean_norm} > {pn}");
            assert!(var >= pv - 1e-5 * (1.0 + pv), "{var} < {pv}");
        }
        prev = Some((mean_norm, var));
    }
}

#[test]
fn phase_retrieval_recovers_feasible_low_nuclear_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 3;
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nuclear0: f64 = v.iter().map(|a| a * a).sum();
    let n = 4 * d;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs()).collect();
    let xs = CovariateSet::new(&rows).unwrap();
    let spec = BandProblemSpec::phase_retrieval(KernelSpec::Linear);
    let m = fit(&spec, &xs, &ys, &settings()).unwrap();
    for (x, y) in xs.rows().zip(&ys) {
        assert!((m.variance_at(x).unwrap() - y * y).abs() <= 1e-5 * (1.0 + y * y));
    }
    // the lifted matrix A = Xᵀ B X acts on the covariates
    let mut a = SymMatrix::zeros(d);
    for p in 0..d {
        for q in 0..=p {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += rows[i][p] * m.b.get(i, j) * rows[j][q];
                }
            }
            a.set(p, q, s);
        }
    }
    assert!(a.trace() <= nuclear0 + 1e-3, "{} vs {nuclear0}", a.trace());
}

#[test]
fn model_json_round_trip_is_bit_exact() {
    let (xs, ys) = random_data(4, 10, 1);
    let spec = BandProblemSpec::simultaneous(2.0, KernelSpec::Linear, KernelSpec::Rbf { bandwidth: 0.8 });
    let m = fit(&spec, &xs, &ys, &settings()).unwrap();
    let back = BandModel::from_json(&m.to_json().unwrap()).unwrap();
    for x in [-1.3, -0.1, 0.0, 0.77, 2.5] {
        for delta in [-0.5, 0.0, 0.5, 3.0] {
            let (p, q) = (m.interval(&[x], delta).unwrap(), back.interval(&[x], delta).unwrap());
            assert_eq!(p.lower.to_bits(), q.lower.to_bits());
            assert_eq!(p.upper.to_bits(), q.upper.to_bits());
        }
    }
    assert!(BandModel::from_json("{\"format\":\"other\",\"version\":1}").is_err());
}

#[test]
fn interval_length_grows_with_delta() {
    let (xs, ys) = random_data(6, 10, 1);
    let spec = BandProblemSpec::fixed_mean(MeanFunction::Zero, KernelSpec::polynomial(2));
    let m = fit(&spec, &xs, &ys, &settings()).unwrap();
    for x in [-1.0, 0.4, 1.2] {
        if m.variance_at(&[x]).unwrap() > 0.0 {
            let mut last = -1.0;
            for delta in [-0.9, -0.5, 0.0, 0.5, 2.0] {
                let len = m.interval(&[x], delta).unwrap().length();
                assert!(len > last);
                last = len;
            }
        }
    }
}
