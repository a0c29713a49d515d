use super::*;
use crate::engine::{sgd_run, RateParams};
use crate::landscapes;

fn synthetic_traj(f_values: Vec<f64>) -> Trajectory {
    let n = f_values.len();
    Trajectory {
        dim: 1,
        seed: (0, 0),
        steps: (0..n as u64).collect(),
        rates: vec![0.1; n],
        params: None,
        noise_log: None,
        terminated_by: Termination::Horizon,
        final_step: (n - 1) as u64,
        final_params: vec![0.0],
        final_f: *f_values.last().unwrap(),
        f_values,
    }
}

#[test]
fn fit_recovers_exact_geometric_decay() {
    let ts: Vec<f64> = (0..=20).map(|t| t as f64).collect();
    let vals: Vec<f64> = (0..=20).map(|t| 0.5f64.powi(t)).collect();
    let (rho, residual) = fit_decay_rate(&ts, &vals).unwrap();
    assert!((rho - 0.5).abs() < 1e-12);
    assert!(residual < 1e-12);
}

#[test]
fn fit_of_constant_series_is_one() {
    let ts: Vec<f64> = (0..15).map(|t| t as f64).collect();
    let vals = vec![3.7; 15];
    let (rho, _) = fit_decay_rate(&ts, &vals).unwrap();
    assert!((rho - 1.0).abs() < 1e-12);
}

#[test]
fn fit_rejects_bad_windows() {
    let ts: Vec<f64> = (0..12).map(|t| t as f64).collect();
    let mut vals = vec![1.0; 12];
    vals[7] = 0.0;
    assert!(matches!(fit_decay_rate(&ts, &vals), Err(Error::NonPositiveSeries { index: 7 })));
    assert!(matches!(
        fit_decay_rate(&ts[..5], &vals[..5]),
        Err(Error::WindowTooShort { len: 5, .. })
    ));
}

#[test]
fn classify_examples_on_tilted_double_well() {
    let l = landscapes::double_well_2d(0.25).unwrap();
    let x_plus = l.minima()[1].point[0];
    // Started essentially at the shallow minimum.
    match classify_basin(&l, &[x_plus + 0.01, 0.0]) {
        Basin::Minimum(i) => assert_eq!(l.minima()[i].label, "x_plus"),
        other => panic!("unexpected {other:?}"),
    }
    // The reproduction's initial point flows into the shallow well.
    match classify_basin(&l, &[3.0, 0.0]) {
        Basin::Minimum(i) => assert_eq!(l.minima()[i].label, "x_plus"),
        other => panic!("unexpected {other:?}"),
    }
    // On the ridge the tilt pushes toward the lower minimum.
    match classify_basin(&l, &[0.0, 0.0]) {
        Basin::Minimum(i) => assert_eq!(l.minima()[i].label, "x_minus"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn classify_tie_breaks_deterministically_when_symmetric() {
    // alpha = 0: the origin is a critical point equidistant from both
    // minima; the tie resolves to the first declared one.
    let l = landscapes::double_well_2d(0.0).unwrap();
    match classify_basin(&l, &[0.0, 0.0]) {
        Basin::Minimum(i) => assert_eq!(i, 0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn hitting_times_examples() {
    // f below the level at every step: tau_k = k.
    let t = synthetic_traj(vec![0.1; 8]);
    assert_eq!(hitting_times(&t, 0.5), vec![0, 1, 2, 3, 4, 5, 6, 7]);
    // Never returns after the start.
    let t = synthetic_traj(vec![0.1, 2.0, 3.0, 4.0]);
    assert_eq!(hitting_times(&t, 0.5), vec![0]);
    // Sparse returns.
    let t = synthetic_traj(vec![9.0, 0.4, 7.0, 0.2, 0.3]);
    assert_eq!(hitting_times(&t, 0.5), vec![0, 1, 3, 4]);
}

#[test]
fn as_rate_sup_sits_at_zero_for_monotone_decay() {
    let l = landscapes::quadratic(1).unwrap();
    let traj = sgd_run(
        &l,
        &NoiseModel::Exact,
        &Schedule::Constant { rate: 0.3 },
        &[2.0],
        40,
        (0, 0),
        &RunOptions::default(),
    )
    .unwrap();
    let stats = as_rate_check(std::slice::from_ref(&traj), 1.0);
    assert_eq!(stats.sups[0].1, 0, "monotone decay peaks at t = 0");
    assert_eq!(stats.sups[0].0, traj.f_values[0]);
}

#[test]
fn single_trajectory_ensemble_matches_direct_run() {
    let l = landscapes::quadratic(2).unwrap();
    let model = NoiseModel::MlGaussian { sigma: 0.5 };
    let schedule = Schedule::Constant { rate: 0.2 };
    let cfg = EnsembleConfig {
        landscape: &l,
        model: &model,
        schedule: &schedule,
        init: InitLaw::Point(vec![1.0, -1.0]),
        trajectories: 1,
        horizon: 50,
        master_seed: 99,
        options: RunOptions::default(),
        frac_threshold: 1e-3,
        classify_basins: false,
        keep_trajectories: false,
    };
    let result = ensemble_run(&cfg).unwrap();
    let direct = sgd_run(
        &l,
        &model,
        &schedule,
        &[1.0, -1.0],
        50,
        (99, 0),
        &RunOptions::default(),
    )
    .unwrap();
    for (stats, (t, f)) in result
        .summary
        .per_step
        .iter()
        .zip(direct.steps.iter().zip(&direct.f_values))
    {
        assert_eq!(stats.t, *t);
        assert_eq!(stats.mean_f, *f);
        assert_eq!(stats.median_f, *f);
    }
}

#[test]
fn ensembles_are_deterministic() {
    let l = landscapes::double_well_2d(0.25).unwrap();
    let model = NoiseModel::Homogeneous { sigma: 2.0 };
    let schedule = Schedule::Decay { scale: 20.0, rate: 0.05, offset: 5.0 };
    let cfg = EnsembleConfig {
        landscape: &l,
        model: &model,
        schedule: &schedule,
        init: InitLaw::Point(vec![3.0, 0.0]),
        trajectories: 64,
        horizon: 100,
        master_seed: 2024,
        options: RunOptions { record_params: false, ..RunOptions::default() },
        frac_threshold: 1e-3,
        classify_basins: true,
        keep_trajectories: false,
    };
    let a = ensemble_run(&cfg).unwrap();
    let b = ensemble_run(&cfg).unwrap();
    assert_eq!(a.summary, b.summary);
    let total: u64 = a.summary.basin_counts.values().sum();
    assert_eq!(total + a.summary.diverged, 64, "basin counts plus diverged cover the ensemble");
}

#[test]
fn gaussian_init_draws_from_trajectory_stream() {
    let l = landscapes::quadratic(1).unwrap();
    let model = NoiseModel::Exact;
    let schedule = Schedule::Constant { rate: 0.5 };
    let cfg = EnsembleConfig {
        landscape: &l,
        model: &model,
        schedule: &schedule,
        init: InitLaw::Gaussian { center: vec![0.0], std: 1.0 },
        trajectories: 16,
        horizon: 5,
        master_seed: 5,
        options: RunOptions::default(),
        frac_threshold: 1e-3,
        classify_basins: false,
        keep_trajectories: true,
    };
    let a = ensemble_run(&cfg).unwrap();
    let b = ensemble_run(&cfg).unwrap();
    let f0a: Vec<f64> = a.trajectories.as_ref().unwrap().iter().map(|t| t.f_values[0]).collect();
    let f0b: Vec<f64> = b.trajectories.as_ref().unwrap().iter().map(|t| t.f_values[0]).collect();
    assert_eq!(f0a, f0b);
    assert!(f0a.iter().any(|v| (v - f0a[0]).abs() > 1e-12), "distinct random initializations");
}

#[test]
fn manifold_rank_at_gd_interpolant() {
    let l = landscapes::regression_toy(2, 9, 3).unwrap();
    let toy = l.per_sample().unwrap();
    let opts = RunOptions {
        target_f: Some(1e-13),
        record_params: false,
        ..RunOptions::default()
    };
    let traj = sgd_run(
        &l,
        &NoiseModel::Exact,
        &Schedule::Constant { rate: 0.05 },
        &[0.3, -0.6, 0.9, 0.817, -1.1, 0.2, 0.45, -0.37, 0.61],
        400_000,
        (0, 0),
        &opts,
    )
    .unwrap();
    assert!(traj.final_f < 1e-13, "gradient descent interpolates the toy");
    let (rank, nullity) = manifold_rank(toy, &traj.final_params, 1e-8).unwrap();
    assert_eq!(rank, 2);
    assert_eq!(nullity, 7);
}

#[test]
fn manifold_rank_requires_interpolation() {
    let l = landscapes::regression_toy(2, 9, 3).unwrap();
    let toy = l.per_sample().unwrap();
    let theta = vec![0.5; 9];
    assert!(matches!(
        manifold_rank(toy, &theta, 1e-8),
        Err(Error::NotOnManifold { .. })
    ));
}

#[test]
fn linear_model_jacobian_has_full_rank() {
    // h(theta, x) = theta . x with independent data vectors: the rows of
    // the Jacobian are the data vectors themselves.
    let rows = 3;
    let cols = 7;
    let mut jac = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            jac[i * cols + j] = ((i * 31 + j * 17 + 5) % 11) as f64 - 5.0;
        }
    }
    let (rank, nullity) = jacobian_rank(&jac, rows, cols, 1e-8);
    assert_eq!(rank, 3);
    assert_eq!(nullity, 4);
}

#[test]
fn duplicated_sample_drops_the_rank() {
    // Same input and target twice: the Jacobian rows repeat.
    let toy = RegressionToy::with_data(vec![0.7, 0.7], vec![0.4, 0.4], 3).unwrap();
    let theta: Vec<f64> = (0..9).map(|i| 0.2 + 0.05 * i as f64).collect();
    let jac = toy.model_jacobian(&theta);
    let (rank, nullity) = jacobian_rank(&jac, 2, 9, 1e-8);
    assert_eq!(rank, 1);
    assert_eq!(nullity, 8);
}

#[test]
fn exact_noise_gives_zero_error_processes() {
    let l = landscapes::double_well_2d(0.25).unwrap();
    let opts = RunOptions { instrument: true, ..RunOptions::default() };
    let x_minus = l.minima()[0].point[0];
    let traj = sgd_run(
        &l,
        &NoiseModel::Exact,
        &Schedule::Constant { rate: 0.01 },
        &[x_minus + 0.2, 0.1],
        100,
        (0, 0),
        &opts,
    )
    .unwrap();
    let p = InstrumentParams {
        learning_rate: 0.01,
        grad_lipschitz: 10.0,
        noise_intensity: 0.0,
        small_level: 0.2,
        level: 0.5,
        noise_budget: 0.04,
    };
    let proc = martingale_instrument(&traj, &p).unwrap();
    assert!(proc.martingale.iter().all(|v| *v == 0.0));
    assert!(proc.quadratic.iter().all(|v| *v == 0.0));
    assert!(proc.combined.iter().all(|v| *v == 0.0));
    assert!(proc.noise_small.iter().all(|b| *b));
}

#[test]
fn instrument_requires_noise_log() {
    let l = landscapes::quadratic(1).unwrap();
    let traj = sgd_run(
        &l,
        &NoiseModel::Exact,
        &Schedule::Constant { rate: 0.1 },
        &[1.0],
        10,
        (0, 0),
        &RunOptions::default(),
    )
    .unwrap();
    let p = InstrumentParams {
        learning_rate: 0.1,
        grad_lipschitz: 1.0,
        noise_intensity: 1.0,
        small_level: 0.2,
        level: 0.5,
        noise_budget: 0.04,
    };
    assert!(matches!(martingale_instrument(&traj, &p), Err(Error::MissingNoiseLog)));
}

#[test]
fn error_processes_are_monotone_and_contained() {
    let l = landscapes::double_well_2d(0.25).unwrap();
    let x_minus = l.minima()[0].point[0];
    let sigma = 0.25;
    let eta = 0.02;
    let model = NoiseModel::MlGaussian { sigma };
    let schedule = Schedule::Constant { rate: eta };
    let opts = RunOptions { instrument: true, ..RunOptions::default() };
    let p = InstrumentParams {
        learning_rate: eta,
        grad_lipschitz: 9.6,
        noise_intensity: sigma,
        small_level: 0.2,
        level: 0.5,
        noise_budget: 0.04,
    };
    // eps' + r + sqrt(r) < eps must hold for the containment claim.
    assert!(p.small_level + p.noise_budget + p.noise_budget.sqrt() < p.level);
    for index in 0..50 {
        let traj =
            sgd_run(&l, &model, &schedule, &[x_minus + 0.25, 0.0], 300, (7, index), &opts)
                .unwrap();
        let proc = martingale_instrument(&traj, &p).unwrap();
        for k in 1..proc.quadratic.len() {
            assert!(proc.quadratic[k] >= proc.quadratic[k - 1], "S_t nondecreasing");
            assert!(proc.combined[k] >= 0.0);
            assert!(proc.stayed_small[k] <= proc.stayed_small[k - 1], "flags are monotone");
            assert!(proc.noise_small[k] <= proc.noise_small[k - 1]);
            // E_{t-1} subset of Omega_t at the trapping level.
            if proc.noise_small[k - 1] {
                assert!(proc.stayed_below_level[k], "noise control keeps the objective small");
            }
        }
    }
}

#[test]
fn theorem_rate_params_admissibility_guard() {
    // The instrument run above is admissible; sanity-check the interval.
    let p = RateParams {
        lojasiewicz: 3.5,
        noise_intensity: 0.25,
        grad_lipschitz: 9.6,
        learning_rate: 0.02,
    };
    assert!(p.is_admissible());
}
