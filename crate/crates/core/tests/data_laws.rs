use hetband::dgp::{generate, DgpKind, DgpSpec, Noise};
use hetband::metrics::{coverage, length_stats};
use hetband::sdpband::PredictionInterval;
use proptest::prelude::*;

#[test]
fn binned_variance_tracks_the_design() {
    for noise in [Noise::Gaussian, Noise::Uniform] {
        let d = generate(&DgpSpec {
            kind: DgpKind::QuadraticVariance { noise },
            n: 100_000,
            seed: 11,
        })
        .unwrap();
        let truth = d.truth.clone().unwrap();
        for x0 in [-1.2, -0.125, 0.0, 0.8, 1.5] {
            let ys: Vec<f64> = d
                .xs
                .first_coords()
                .iter()
                .zip(&d.ys)
                .filter(|(x, _)| (*x - x0).abs() <= 0.025)
                .map(|(_, y)| *y)
                .collect();
            let var = ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64;
            let v = truth.variance(x0);
            assert!((var - v).abs() <= 0.15 * v, "{noise:?} at {x0}: {var} vs {v} over {} points", ys.len());
        }
    }
}

proptest! {
    #[test]
    fn coverage_ignores_order_and_mean_length_scales(
        ys in proptest::collection::vec(-3.0f64..3.0, 2..40),
        width in 0.1f64..3.0,
        factor in 0.1f64..5.0,
        rot in 0usize..40,
    ) {
        let n = ys.len();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let set = hetband::kernel::CovariateSet::from_scalars(&xs).unwrap();
        let band = |x: &[f64]| Ok(PredictionInterval::centered(0.0, width * (1.0 + x[0])));
        let c = coverage(band, &set, &ys).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.rotate_left(rot % n);
        let px = set.select(&idx);
        let py: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        prop_assert_eq!(c, coverage(band, &px, &py).unwrap());

        let scaled = |x: &[f64]| Ok(PredictionInterval::centered(0.0, factor * width * (1.0 + x[0])));
        let (a, b) = (length_stats(band, &set).unwrap(), length_stats(scaled, &set).unwrap());
        prop_assert!((b.mean - factor * a.mean).abs() <= 1e-12 * (1.0 + b.mean));
    }
}
