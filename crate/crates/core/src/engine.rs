//! The SGD iteration: learning-rate schedules, rate bounds, trajectory
//! recording and stopping rules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::landscapes::Landscape;
use crate::linalg;
use crate::noise::NoiseModel;

/// Default divergence cap on the objective value. Finite-step escape from a
/// steep well is a real possibility under value-scaled noise; it is surfaced
/// as a flagged termination rather than an error.
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e12;

/// Horizon up to which every step is logged; longer runs are thinned
/// geometrically (powers of 1.1, rounded).
pub const FULL_LOG_HORIZON: u64 = 10_000;

/// Learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant { rate: f64 },
    /// `rate0 / (t + offset)^exponent`.
    Power { rate0: f64, offset: f64, exponent: f64 },
    /// `scale * rate / (t + offset)`, the decaying schedule of the
    /// double-well comparison runs.
    Decay { scale: f64, rate: f64, offset: f64 },
    /// Piecewise-constant rates with switch times: `rates[i]` applies while
    /// `t < switches[i]`; the last rate applies forever.
    Step { switches: Vec<u64>, rates: Vec<f64> },
}

impl Schedule {
    /// Rate at step `t`; strictly positive for all valid schedules.
    pub fn rate(&self, t: u64) -> f64 {
        match self {
            Schedule::Constant { rate } => *rate,
            Schedule::Power { rate0, offset, exponent } => {
                rate0 / (t as f64 + offset).powf(*exponent)
            }
            Schedule::Decay { scale, rate, offset } => scale * rate / (t as f64 + offset),
            Schedule::Step { switches, rates } => {
                for (i, switch) in switches.iter().enumerate() {
                    if t < *switch {
                        return rates[i];
                    }
                }
                *rates.last().expect("validated nonempty")
            }
        }
    }

    /// Robbins-Monro conditions (`sum eta = inf`, `sum eta^2 < inf`),
    /// asserted symbolically by kind.
    pub fn satisfies_robbins_monro(&self) -> bool {
        match self {
            Schedule::Constant { .. } | Schedule::Step { .. } => false,
            Schedule::Power { exponent, .. } => *exponent > 0.5 && *exponent <= 1.0,
            Schedule::Decay { .. } => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidParameter { name: "schedule", message };
        match self {
            Schedule::Constant { rate } => {
                if !(rate > &0.0) {
                    return Err(bad(format!("constant rate must be positive, got {rate}")));
                }
            }
            Schedule::Power { rate0, offset, exponent } => {
                if !(rate0 > &0.0 && offset > &0.0 && exponent >= &0.0) {
                    return Err(bad(format!(
                        "power schedule needs rate0, offset > 0 and exponent >= 0, got \
                         ({rate0}, {offset}, {exponent})"
                    )));
                }
            }
            Schedule::Decay { scale, rate, offset } => {
                if !(scale > &0.0 && rate > &0.0 && offset > &0.0) {
                    return Err(bad(format!(
                        "decay schedule needs positive parameters, got ({scale}, {rate}, {offset})"
                    )));
                }
            }
            Schedule::Step { switches, rates } => {
                if rates.is_empty() || rates.len() != switches.len() + 1 {
                    return Err(bad("step schedule needs k switch times and k+1 rates".into()));
                }
                if rates.iter().any(|r| !(r > &0.0)) {
                    return Err(bad("step rates must all be positive".into()));
                }
                if switches.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("switch times must increase".into()));
                }
            }
        }
        Ok(())
    }
}

/// Constants entering the per-step contraction bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    /// Lojasiewicz constant in force on the region of interest.
    pub lojasiewicz: f64,
    /// Noise intensity: second moment of the noise is at most
    /// `noise_intensity * f(theta)`.
    pub noise_intensity: f64,
    /// One-sided Lipschitz constant of the gradient.
    pub grad_lipschitz: f64,
    pub learning_rate: f64,
}

impl RateParams {
    /// Upper end of the admissible rate interval,
    /// `2 L / (C_L (L + sigma))`. This is the self-consistent constant of
    /// the contraction derivation; see [`RateParams::statement_upper`] for
    /// the published variant.
    pub fn admissible_upper(&self) -> f64 {
        2.0 * self.lojasiewicz
            / (self.grad_lipschitz * (self.lojasiewicz + self.noise_intensity))
    }

    /// The variant threshold `2 L / (C_L (1 + sigma))`, exposed read-only
    /// for comparison; not used by the admissibility check.
    pub fn statement_upper(&self) -> f64 {
        2.0 * self.lojasiewicz / (self.grad_lipschitz * (1.0 + self.noise_intensity))
    }

    pub fn is_admissible(&self) -> bool {
        self.learning_rate > 0.0 && self.learning_rate < self.admissible_upper()
    }
}

/// Per-step contraction factor of the expected objective,
/// `rho = 1 - L*eta + C_L (L + sigma) eta^2 / 2`, in `(0, 1)` for
/// admissible rates.
pub fn contraction_factor(p: &RateParams) -> Result<f64> {
    if !p.is_admissible() {
        return Err(Error::InadmissibleRate { eta: p.learning_rate, upper: p.admissible_upper() });
    }
    let eta = p.learning_rate;
    Ok(1.0 - p.lojasiewicz * eta
        + p.grad_lipschitz * (p.lojasiewicz + p.noise_intensity) * eta * eta / 2.0)
}

/// Rate minimizing the contraction factor, and the factor it attains:
/// `eta* = L / (C_L (L + sigma))`, `rho* = 1 - L^2 / (2 C_L (L + sigma))`.
pub fn optimal_rate(lojasiewicz: f64, noise_intensity: f64, grad_lipschitz: f64) -> (f64, f64) {
    let eta = lojasiewicz / (grad_lipschitz * (lojasiewicz + noise_intensity));
    let rho = 1.0 - lojasiewicz * lojasiewicz
        / (2.0 * grad_lipschitz * (lojasiewicz + noise_intensity));
    (eta, rho)
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    /// Objective exceeded the cap or became non-finite at this step.
    Divergence { step: u64 },
    /// Objective fell below the target at this step.
    Target { step: u64 },
}

/// Options of a single run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record the noise decomposition (and parameters) at every executed
    /// step. Forces full logging cadence.
    pub instrument: bool,
    /// Record the parameter vector at logged steps.
    pub record_params: bool,
    pub target_f: Option<f64>,
    pub divergence_cap: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            instrument: false,
            record_params: true,
            target_f: None,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        }
    }
}

/// Per-step noise record of an instrumented run.
#[derive(Debug, Clone)]
pub struct NoiseLog {
    /// Noise vectors, flattened, one block of `dim` per executed step.
    pub vectors: Vec<f64>,
    /// `grad f(theta_t) . noise_t` per executed step.
    pub grad_dot: Vec<f64>,
    /// `|noise_t|^2` per executed step.
    pub norm_sq: Vec<f64>,
    /// `f(theta_t)` per executed step.
    pub f_at: Vec<f64>,
}

/// Recorded trajectory. Stored column-wise; `steps[k]` is the step index of
/// the k-th logged record and `params` (when recorded) holds `dim` entries
/// per record. Objective values are re-evaluations at the logged iterate,
/// never extrapolations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub seed: (u64, u64),
    pub steps: Vec<u64>,
    pub f_values: Vec<f64>,
    pub rates: Vec<f64>,
    pub params: Option<Vec<f64>>,
    pub noise_log: Option<NoiseLog>,
    pub terminated_by: Termination,
    pub final_step: u64,
    pub final_params: Vec<f64>,
    pub final_f: f64,
}

impl Trajectory {
    /// Parameter vector of the k-th logged record.
    pub fn params_at(&self, k: usize) -> Option<&[f64]> {
        self.params.as_ref().map(|p| &p[k * self.dim..(k + 1) * self.dim])
    }
}

/// The RNG stream of trajectory `index` under `master_seed`. Streams are
/// independent ChaCha counters: bit-identical per (seed, index) regardless
/// of how trajectories are scheduled across workers.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn logged_steps(horizon: u64, full: bool) -> Vec<u64> {
    if full || horizon <= FULL_LOG_HORIZON {
        return (0..=horizon).collect();
    }
    let mut steps = vec![0u64];
    let mut x = 1.0f64;
    while (x as u64) < horizon {
        let t = x.round() as u64;
        if *steps.last().unwrap() != t {
            steps.push(t);
        }
        x *= 1.1;
    }
    if *steps.last().unwrap() != horizon {
        steps.push(horizon);
    }
    steps
}

/// Run SGD for `horizon` steps: `theta_{t+1} = theta_t - eta_t g(theta_t)`.
///
/// Stops early when the objective drops below `target_f` or exceeds
/// `divergence_cap` (or goes non-finite), flagged in `terminated_by` with
/// the offending step.
pub fn sgd_run(
    landscape: &Landscape,
    model: &NoiseModel,
    schedule: &Schedule,
    theta0: &[f64],
    horizon: u64,
    seed: (u64, u64),
    options: &RunOptions,
) -> Result<Trajectory> {
    let mut rng = trajectory_rng(seed.0, seed.1);
    sgd_run_with_rng(landscape, model, schedule, theta0, horizon, seed, options, &mut rng)
}

/// Variant taking an explicit RNG so callers can draw the initial
/// condition from the same per-trajectory stream first.
#[allow(clippy::too_many_arguments)]
pub fn sgd_run_with_rng<R: rand::Rng>(
    landscape: &Landscape,
    model: &NoiseModel,
    schedule: &Schedule,
    theta0: &[f64],
    horizon: u64,
    seed: (u64, u64),
    options: &RunOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            message: "need at least one step".into(),
        });
    }
    if theta0.len() != landscape.dim() {
        return Err(Error::BadParamVector(format!(
            "dimension {} != landscape dimension {}",
            theta0.len(),
            landscape.dim()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadParamVector("non-finite initial point".into()));
    }
    schedule.validate()?;

    let dim = landscape.dim();
    let record_params = options.record_params || options.instrument;
    let log_steps = logged_steps(horizon, options.instrument);
    let mut log_iter = log_steps.iter().peekable();

    let mut traj = Trajectory {
        dim,
        seed,
        steps: Vec::with_capacity(log_steps.len()),
        f_values: Vec::with_capacity(log_steps.len()),
        rates: Vec::with_capacity(log_steps.len()),
        params: record_params.then(|| Vec::with_capacity(log_steps.len() * dim)),
        noise_log: options.instrument.then(|| NoiseLog {
            vectors: Vec::with_capacity(horizon as usize * dim),
            grad_dot: Vec::with_capacity(horizon as usize),
            norm_sq: Vec::with_capacity(horizon as usize),
            f_at: Vec::with_capacity(horizon as usize),
        }),
        terminated_by: Termination::Horizon,
        final_step: 0,
        final_params: Vec::new(),
        final_f: 0.0,
    };

    let mut theta = theta0.to_vec();
    let record = |traj: &mut Trajectory, t: u64, theta: &[f64], f: f64, eta: f64| {
        traj.steps.push(t);
        traj.f_values.push(f);
        traj.rates.push(eta);
        if let Some(p) = traj.params.as_mut() {
            p.extend_from_slice(theta);
        }
    };

    for t in 0..=horizon {
        let f = landscape.eval(&theta);
        let eta = schedule.rate(t);
        let non_finite = !f.is_finite() || theta.iter().any(|v| !v.is_finite());
        let logged = log_iter.peek() == Some(&&t);
        if logged {
            log_iter.next();
            record(&mut traj, t, &theta, f, eta);
        }

        let stop = if non_finite || f > options.divergence_cap {
            Some(Termination::Divergence { step: t })
        } else if options.target_f.map_or(false, |target| f < target) {
            Some(Termination::Target { step: t })
        } else if t == horizon {
            Some(Termination::Horizon)
        } else {
            None
        };
        if let Some(reason) = stop {
            if !logged {
                record(&mut traj, t, &theta, f, eta);
            }
            traj.terminated_by = reason;
            traj.final_step = t;
            traj.final_params = theta;
            traj.final_f = f;
            return Ok(traj);
        }

        let sample = model.draw_with_f(landscape, &theta, f, rng)?;
        if let Some(log) = traj.noise_log.as_mut() {
            log.vectors.extend_from_slice(&sample.noise_part);
            let grad: Vec<f64> = sample.g.iter().zip(&sample.noise_part).map(|(g, n)| g - n).collect();
            log.grad_dot.push(linalg::dot(&grad, &sample.noise_part));
            log.norm_sq.push(linalg::dot(&sample.noise_part, &sample.noise_part));
            log.f_at.push(f);
        }
        for (x, g) in theta.iter_mut().zip(&sample.g) {
            *x -= eta * g;
        }
    }
    unreachable!("loop always terminates via the stop arm at t == horizon");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes;

    #[test]
    fn schedule_examples() {
        let decay = Schedule::Decay { scale: 20.0, rate: 0.05, offset: 5.0 };
        assert!((decay.rate(0) - 0.2).abs() < 1e-15, "20 * 0.05 / 5 = 0.2");
        let constant = Schedule::Constant { rate: 0.05 };
        assert_eq!(constant.rate(0), 0.05);
        assert_eq!(constant.rate(10_000), 0.05);
        let power = Schedule::Power { rate0: 1.0, offset: 1.0, exponent: 1.0 };
        assert!((power.rate(9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn robbins_monro_by_kind() {
        assert!(Schedule::Decay { scale: 20.0, rate: 0.05, offset: 5.0 }.satisfies_robbins_monro());
        assert!(Schedule::Power { rate0: 1.0, offset: 1.0, exponent: 0.75 }
            .satisfies_robbins_monro());
        assert!(!Schedule::Power { rate0: 1.0, offset: 1.0, exponent: 0.5 }
            .satisfies_robbins_monro());
        assert!(!Schedule::Power { rate0: 1.0, offset: 1.0, exponent: 1.5 }
            .satisfies_robbins_monro());
        assert!(!Schedule::Constant { rate: 0.1 }.satisfies_robbins_monro());
    }

    #[test]
    fn step_schedule_switches() {
        let s = Schedule::Step { switches: vec![10, 20], rates: vec![0.1, 0.05, 0.01] };
        s.validate().unwrap();
        assert_eq!(s.rate(0), 0.1);
        assert_eq!(s.rate(9), 0.1);
        assert_eq!(s.rate(10), 0.05);
        assert_eq!(s.rate(25), 0.01);
        assert!(Schedule::Step { switches: vec![5], rates: vec![0.1] }.validate().is_err());
        assert!(Schedule::Constant { rate: 0.0 }.validate().is_err());
    }

    #[test]
    fn contraction_factor_examples() {
        // L=2, sigma=0, C_L=1, eta=0.5 -> 1 - 1 + 1*2*0.25/2 = 0.25.
        let p = RateParams {
            lojasiewicz: 2.0,
            noise_intensity: 0.0,
            grad_lipschitz: 1.0,
            learning_rate: 0.5,
        };
        assert!((contraction_factor(&p).unwrap() - 0.25).abs() < 1e-15);
        // Optimum reproduces one-step gradient descent on the quadratic.
        let (eta, rho) = optimal_rate(2.0, 0.0, 1.0);
        assert_eq!(eta, 1.0);
        assert_eq!(rho, 0.0);
        // Vanishing rate gives no progress.
        let tiny = RateParams { learning_rate: 1e-9, ..p };
        assert!((contraction_factor(&tiny).unwrap() - 1.0).abs() < 1e-8);
        // Theorem 3.1 acceptance parameters: rho = 0.815.
        let thm = RateParams {
            lojasiewicz: 2.0,
            noise_intensity: 1.0,
            grad_lipschitz: 1.0,
            learning_rate: 0.1,
        };
        assert!((contraction_factor(&thm).unwrap() - 0.815).abs() < 1e-15);
    }

    #[test]
    fn inadmissible_rate_reports_interval() {
        let p = RateParams {
            lojasiewicz: 2.0,
            noise_intensity: 0.0,
            grad_lipschitz: 1.0,
            learning_rate: 4.5,
        };
        match contraction_factor(&p) {
            Err(Error::InadmissibleRate { eta, upper }) => {
                assert_eq!(eta, 4.5);
                assert!((upper - 2.0).abs() < 1e-15, "2L/(C_L (L + sigma)) = 2");
            }
            other => panic!("expected inadmissible-rate error, got {other:?}"),
        }
        // The published variant divides by (1 + sigma) instead.
        assert!((p.statement_upper() - 4.0).abs() < 1e-15);
        let noisy = RateParams { noise_intensity: 3.0, ..p };
        assert!((noisy.admissible_upper() - 0.8).abs() < 1e-15);
        assert!((noisy.statement_upper() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_noise_reproduces_closed_form_decay() {
        let l = landscapes::quadratic(1).unwrap();
        let schedule = Schedule::Constant { rate: 0.25 };
        let traj = sgd_run(
            &l,
            &NoiseModel::Exact,
            &schedule,
            &[1.0],
            30,
            (0, 0),
            &RunOptions::default(),
        )
        .unwrap();
        let mut x = 1.0f64;
        for (k, t) in traj.steps.iter().enumerate() {
            assert_eq!(*t, k as u64);
            assert_eq!(traj.params_at(k).unwrap()[0], x, "theta_t = (1-eta)^t exactly");
            assert_eq!(traj.f_values[k], 0.5 * x * x);
            x *= 0.75;
        }
        assert_eq!(traj.terminated_by, Termination::Horizon);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let l = landscapes::double_well_2d(0.25).unwrap();
        let model = NoiseModel::MlGaussian { sigma: 32.0 };
        let schedule = Schedule::Constant { rate: 0.05 };
        let opts = RunOptions { instrument: true, ..RunOptions::default() };
        let a = sgd_run(&l, &model, &schedule, &[3.0, 0.0], 200, (42, 7), &opts).unwrap();
        let b = sgd_run(&l, &model, &schedule, &[3.0, 0.0], 200, (42, 7), &opts).unwrap();
        assert_eq!(a.f_values, b.f_values);
        assert_eq!(a.params, b.params);
        assert_eq!(a.noise_log.as_ref().unwrap().vectors, b.noise_log.as_ref().unwrap().vectors);
        let c = sgd_run(&l, &model, &schedule, &[3.0, 0.0], 200, (42, 8), &opts).unwrap();
        assert_ne!(a.f_values, c.f_values, "different stream, different path");
    }

    #[test]
    fn update_identity_against_logged_noise() {
        let l = landscapes::double_well_2d(0.1).unwrap();
        let model = NoiseModel::MlGaussian { sigma: 4.0 };
        let schedule = Schedule::Decay { scale: 20.0, rate: 0.05, offset: 5.0 };
        let opts = RunOptions { instrument: true, ..RunOptions::default() };
        let traj = sgd_run(&l, &model, &schedule, &[2.0, 1.0], 50, (3, 1), &opts).unwrap();
        let log = traj.noise_log.as_ref().unwrap();
        for k in 0..traj.steps.len() - 1 {
            let theta = traj.params_at(k).unwrap();
            let next = traj.params_at(k + 1).unwrap();
            let grad = l.grad_vec(theta);
            let eta = traj.rates[k];
            for j in 0..2 {
                let g = grad[j] + log.vectors[k * 2 + j];
                assert_eq!(next[j], theta[j] - eta * g, "theta_{{t+1}} = theta_t - eta_t g_t");
            }
        }
    }

    #[test]
    fn target_stop_records_offending_step() {
        let l = landscapes::quadratic(1).unwrap();
        let opts = RunOptions { target_f: Some(1e-6), ..RunOptions::default() };
        let traj = sgd_run(
            &l,
            &NoiseModel::Exact,
            &Schedule::Constant { rate: 0.5 },
            &[1.0],
            10_000,
            (0, 0),
            &opts,
        )
        .unwrap();
        match traj.terminated_by {
            Termination::Target { step } => assert_eq!(step, traj.final_step),
            other => panic!("expected target stop, got {other:?}"),
        }
        assert!(traj.final_f < 1e-6);
    }

    #[test]
    fn divergence_is_flagged_not_fatal() {
        // Gradient ascent on the quadratic blows past the cap.
        let l = landscapes::quadratic(1).unwrap();
        let opts = RunOptions { divergence_cap: 1e6, ..RunOptions::default() };
        let traj = sgd_run(
            &l,
            &NoiseModel::Exact,
            &Schedule::Constant { rate: 3.0 },
            &[1.0],
            1000,
            (0, 0),
            &opts,
        )
        .unwrap();
        assert!(matches!(traj.terminated_by, Termination::Divergence { .. }));
        assert!(traj.final_f > 1e6);
    }

    #[test]
    fn long_runs_thin_logging_geometrically() {
        let steps = logged_steps(100_000, false);
        assert_eq!(steps[0], 0);
        assert_eq!(*steps.last().unwrap(), 100_000);
        assert!(steps.len() < 200, "geometric thinning keeps the log small");
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        let full = logged_steps(500, false);
        assert_eq!(full.len(), 501);
    }

    #[test]
    fn theorem_rate_holds_on_quadratic_ensemble() {
        // Monte-Carlo mean against the contraction bound: mean f(theta_50)
        // over 10^4 paths stays within 5% of rho^50 f(theta_0).
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
        let opts = RunOptions { record_params: false, ..RunOptions::default() };
        let mut acc = 0.0;
        let n = 10_000;
        for i in 0..n {
            let traj = sgd_run(&l, &model, &schedule, &[1.0], 50, (77, i), &opts).unwrap();
            acc += traj.final_f;
        }
        let mean = acc / n as f64;
        let bound = rho.powi(50) * 0.5;
        assert!(mean <= bound * 1.05, "mean {mean} vs bound {bound}");
        assert!(mean >= bound * 0.8, "saturating noise keeps the bound tight");
    }
}
