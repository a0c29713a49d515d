//! Almost-sure decay of `beta^t f(theta_t)` along individual trajectories,
//! complementing the in-expectation contraction tests.

use sgdlab_core::analysis::{as_rate_check, ensemble_run, EnsembleConfig, InitLaw};
use sgdlab_core::engine::{contraction_factor, RateParams, RunOptions, Schedule};
use sgdlab_core::landscapes;
use sgdlab_core::noise::NoiseModel;

#[test]
fn per_trajectory_rate_peaks_early() {
    let l = landscapes::quadratic(1).unwrap();
    let model = NoiseModel::MlGaussian { sigma: 1.0 };
    let schedule = Schedule::Constant { rate: 0.1 };
    let rho = contraction_factor(&RateParams {
        lojasiewicz: 2.0,
        noise_intensity: 1.0,
        grad_lipschitz: 1.0,
        learning_rate: 0.1,
    })
    .unwrap();
    let beta = rho.powf(-0.5);
    let horizon = 500u64;
    let cfg = EnsembleConfig {
        landscape: &l,
        model: &model,
        schedule: &schedule,
        init: InitLaw::Point(vec![1.0]),
        trajectories: 1000,
        horizon,
        master_seed: 314,
        options: RunOptions { record_params: false, ..RunOptions::default() },
        frac_threshold: 1e-3,
        classify_basins: false,
        keep_trajectories: true,
    };
    let result = ensemble_run(&cfg).unwrap();
    let trajs = result.trajectories.unwrap();

    let stats = as_rate_check(&trajs, beta);
    let early =
        stats.sups.iter().filter(|(_, at)| *at < horizon / 2).count() as f64 / 1000.0;
    assert!(early >= 0.99, "sup of beta^t f attained early in {early} of trajectories");

    // Stronger form: the weighted trajectory decays across the halves.
    let mut decayed = 0;
    for traj in &trajs {
        let mut first = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for (k, &t) in traj.steps.iter().enumerate() {
            let v = beta.powf(t as f64) * traj.f_values[k];
            if t <= horizon / 2 {
                first = first.max(v);
            } else {
                second = second.max(v);
            }
        }
        if second < first {
            decayed += 1;
        }
    }
    assert!(decayed >= 990, "beta^t f decayed across halves in {decayed}/1000 trajectories");
}
