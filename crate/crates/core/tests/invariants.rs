//! Property tests of the structural invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgdlab_core::analysis::hitting_times;
use sgdlab_core::engine::{sgd_run, RunOptions, Schedule};
use sgdlab_core::landscapes;
use sgdlab_core::linalg;
use sgdlab_core::noise::{covariance, NoiseModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_emit_positive_rates(
        rate in 1e-6f64..10.0,
        offset in 0.1f64..100.0,
        exponent in 0.0f64..2.0,
        t in 0u64..1_000_000,
    ) {
        let kinds = [
            Schedule::Constant { rate },
            Schedule::Power { rate0: rate, offset, exponent },
            Schedule::Decay { scale: 20.0, rate, offset },
            Schedule::Step { switches: vec![10, 100], rates: vec![rate, rate / 2.0, rate / 10.0] },
        ];
        for s in kinds {
            s.validate().unwrap();
            prop_assert!(s.rate(t) > 0.0);
        }
    }

    #[test]
    fn power_robbins_monro_criterion(exponent in 0.0f64..2.0) {
        let s = Schedule::Power { rate0: 1.0, offset: 1.0, exponent };
        prop_assert_eq!(
            s.satisfies_robbins_monro(),
            exponent > 0.5 && exponent <= 1.0
        );
    }

    #[test]
    fn hitting_times_increase_and_hit(level in 0.05f64..2.0, seed in 0u64..500) {
        let l = landscapes::double_well_2d(0.25).unwrap();
        let model = NoiseModel::MlGaussian { sigma: 8.0 };
        let schedule = Schedule::Constant { rate: 0.05 };
        let traj = sgd_run(
            &l, &model, &schedule, &[3.0, 0.0], 120, (seed, 0), &RunOptions::default(),
        ).unwrap();
        let taus = hitting_times(&traj, level);
        prop_assert_eq!(taus[0], 0);
        prop_assert!(taus.windows(2).all(|w| w[0] < w[1]));
        for tau in &taus[1..] {
            let k = traj.steps.binary_search(tau).unwrap();
            prop_assert!(traj.f_values[k] <= level);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd(sigma in 0.1f64..4.0, seed in 0u64..200) {
        let l = landscapes::quadratic(4).unwrap();
        let model = NoiseModel::MlGaussian { sigma };
        let theta = [0.7, -0.3, 1.1, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = covariance(&model, &l, &theta, 500, &mut rng).unwrap();
        prop_assert!(linalg::symmetry_deviation(&cov, 4) <= 1e-12);
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = linalg::min_eigenvalue(&cov, 4).unwrap();
        prop_assert!(min >= -1e-10 * scale.max(1.0));
    }

    #[test]
    fn quadratic_exact_descent_closed_form(rate in 0.01f64..1.5, x0 in -3.0f64..3.0) {
        let l = landscapes::quadratic(1).unwrap();
        let traj = sgd_run(
            &l, &NoiseModel::Exact, &Schedule::Constant { rate }, &[x0], 25, (0, 0),
            &RunOptions::default(),
        ).unwrap();
        let mut x = x0;
        for k in 0..traj.steps.len() {
            prop_assert_eq!(traj.params_at(k).unwrap()[0], x);
            x -= rate * x; // the engine's own update expression
        }
    }

    #[test]
    fn instrumented_runs_satisfy_update_identity(seed in 0u64..300) {
        let l = landscapes::double_well_2d(0.25).unwrap();
        let model = NoiseModel::MlGaussian { sigma: 8.0 };
        let schedule = Schedule::Decay { scale: 20.0, rate: 0.05, offset: 5.0 };
        let opts = RunOptions { instrument: true, ..RunOptions::default() };
        let traj = sgd_run(&l, &model, &schedule, &[2.0, -1.0], 40, (seed, 3), &opts).unwrap();
        let log = traj.noise_log.as_ref().unwrap();
        for k in 0..traj.steps.len() - 1 {
            let here = traj.params_at(k).unwrap();
            let next = traj.params_at(k + 1).unwrap();
            let grad = l.grad_vec(here);
            for j in 0..2 {
                let g = grad[j] + log.vectors[k * 2 + j];
                prop_assert_eq!(next[j], here[j] - traj.rates[k] * g);
            }
        }
    }
}
