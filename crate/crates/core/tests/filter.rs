use fpf_gain::bench::{fpf_demo, DensityConfig, ExperimentConfig, FilterConfig, ObservationConfig};
use fpf_gain::fpf::{kalman_bucy, run_filter, simulate_truth, Drift, FilterScenario};
use fpf_gain::{DensitySpec, Gaussian, ObservationFn, SolverConfig};
use nalgebra::DMatrix;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn linear_scenario(particles: usize, seed: u64) -> FilterScenario {
    FilterScenario {
        drift: Drift::Linear(DMatrix::from_row_slice(1, 1, &[-0.5])),
        observation: ObservationFn::Linear(vec![2.0]),
        prior: DensitySpec::Gaussian(Gaussian::new(vec![1.0], DMatrix::from_element(1, 1, 2.0)).unwrap()),
        dt: 0.01,
        horizon: 1.0,
        particles,
        seed,
    }
}

#[test]
fn kalman_gain_mode_tracks_the_kalman_bucy_mean_and_variance() {
    let (mut mean_offsets, mut var_offsets) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let s = linear_scenario(200, seed);
        let truth = simulate_truth(&s).unwrap();
        let kb = kalman_bucy(&s, &truth).unwrap();
        let run = run_filter(&s, &truth, &kb.gain_mode(&s).unwrap(), 0.1, &SolverConfig::default()).unwrap();
        let last = run.means.nrows() - 1;
        mean_offsets.push(run.means[(last, 0)] - kb.means[(last, 0)]);
        var_offsets.push(run.final_covariance[(0, 0)] - kb.covariances.last().unwrap()[(0, 0)]);
    }
    for (what, xs) in [("mean", &mean_offsets), ("variance", &var_offsets)] {
        let (m, se) = mean_and_se(xs);
        assert!(m.abs() <= 3.0 * se, "{what} offset {m} ± {se}");
    }
}

#[test]
fn kernel_gain_filter_error_is_close_to_kalman_bucy() {
    let cfg = ExperimentConfig {
        density: DensityConfig::IsotropicGaussian { variance: 1.0, mean: 0.0 },
        observation: ObservationConfig::Linear { h: vec![1.0] },
        filter: FilterConfig {
            drift: Some(vec![vec![-0.5]]),
            dt: 0.01,
            horizon: 1.0,
            particles: 500,
            modes: vec!["g2".into()],
            epsilon: 0.1,
            runs: 8,
        },
        seed: 21,
        ..Default::default()
    };
    let (_, summary) = fpf_demo(&cfg).unwrap();
    let kb = summary.kalman_mean_mse.unwrap();
    let g2 = summary.modes[0].mean_mse;
    assert!((g2 - kb).abs() <= 0.2 * kb, "G2 mean square error {g2} vs Kalman–Bucy {kb}");
}

#[test]
fn constant_gain_mode_follows_kalman_bucy_in_two_dimensions() {
    let cfg = ExperimentConfig {
        density: DensityConfig::Gaussian { mean: vec![0.5, -0.5], covariance: vec![vec![1.0, 0.3], vec![0.3, 0.8]] },
        observation: ObservationConfig::Coordinate { index: 0 },
        dimensions: vec![2],
        filter: FilterConfig {
            drift: Some(vec![vec![-1.0, 0.5], vec![0.0, -0.5]]),
            dt: 0.01,
            horizon: 0.5,
            particles: 300,
            modes: vec!["constant".into()],
            epsilon: 0.1,
            runs: 30,
        },
        seed: 13,
        ..Default::default()
    };
    let (_, summary) = fpf_demo(&cfg).unwrap();
    assert_eq!(summary.modes[0].tracks_kalman, Some(true));
}
