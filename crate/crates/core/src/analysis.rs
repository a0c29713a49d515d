//! Ensemble execution, statistics, decay-rate fitting, basin
//! classification, error-process instrumentation and minimizer-manifold
//! diagnostics.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::engine::{self, RunOptions, Schedule, Termination, Trajectory};
use crate::error::{Error, Result};
use crate::landscapes::{Landscape, RegressionToy};
use crate::linalg;
use crate::noise::NoiseModel;

/// Initial condition of an ensemble: a fixed point or a seeded law.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    Point(Vec<f64>),
    /// Isotropic Gaussian ball around a center.
    Gaussian { center: Vec<f64>, std: f64 },
}

impl InitLaw {
    fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitLaw::Point(p) => p.clone(),
            InitLaw::Gaussian { center, std } => {
                let normal = StandardNormal;
                center
                    .iter()
                    .map(|c| c + std * <StandardNormal as Distribution<f64>>::sample(&normal, rng))
                    .collect()
            }
        }
    }
}

/// Ensemble experiment description.
#[derive(Debug, Clone)]
pub struct EnsembleConfig<'a> {
    pub landscape: &'a Landscape,
    pub model: &'a NoiseModel,
    pub schedule: &'a Schedule,
    pub init: InitLaw,
    pub trajectories: u64,
    pub horizon: u64,
    pub master_seed: u64,
    pub options: RunOptions,
    /// Threshold of the per-step `fraction below` statistic.
    pub frac_threshold: f64,
    /// Classify final positions into basins of the declared minima.
    pub classify_basins: bool,
    /// Keep the full trajectories in the result (instrumentation needs
    /// them); otherwise only final states are retained.
    pub keep_trajectories: bool,
}

/// Final state of one trajectory.
#[derive(Debug, Clone)]
pub struct FinalState {
    pub step: u64,
    pub f: f64,
    pub params: Vec<f64>,
    pub terminated_by: Termination,
    pub basin: Option<Basin>,
}

/// Per-logged-step ensemble statistics, exact reductions of the logged
/// values of the live (non-diverged) trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub t: u64,
    pub mean_f: f64,
    pub median_f: f64,
    pub q05: f64,
    pub q95: f64,
    pub frac_below: f64,
    pub live: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub rho: f64,
    pub window: (u64, u64),
    pub residual: f64,
}

/// Deterministic summary of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub trajectories: u64,
    pub master_seed: u64,
    pub per_step: Vec<StepStats>,
    pub basin_counts: BTreeMap<String, u64>,
    pub diverged: u64,
    pub rate_fit: Option<RateFit>,
    pub frac_threshold: f64,
}

pub struct EnsembleResult {
    pub summary: EnsembleSummary,
    pub finals: Vec<FinalState>,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Run `trajectories` independent SGD paths with streams split from the
/// master seed and reduce them into a deterministic summary. Per-path
/// divergence is counted, never fatal. Worker count cannot change any
/// output: paths are keyed by index and reduced in index order.
pub fn ensemble_run(cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    if cfg.trajectories == 0 {
        return Err(Error::InvalidParameter {
            name: "trajectories",
            message: "need at least one trajectory".into(),
        });
    }
    let runs: Vec<Result<Trajectory>> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|index| {
            let mut rng = engine::trajectory_rng(cfg.master_seed, index);
            let theta0 = cfg.init.sample(&mut rng);
            engine::sgd_run_with_rng(
                cfg.landscape,
                cfg.model,
                cfg.schedule,
                &theta0,
                cfg.horizon,
                (cfg.master_seed, index),
                &cfg.options,
                &mut rng,
            )
        })
        .collect();
    let mut trajs = Vec::with_capacity(runs.len());
    for r in runs {
        trajs.push(r?);
    }

    let mut finals: Vec<FinalState> = trajs
        .par_iter()
        .map(|t| FinalState {
            step: t.final_step,
            f: t.final_f,
            params: t.final_params.clone(),
            terminated_by: t.terminated_by,
            basin: None,
        })
        .collect();
    if cfg.classify_basins {
        let basins: Vec<Option<Basin>> = finals
            .par_iter()
            .map(|fs| match fs.terminated_by {
                Termination::Divergence { .. } => None,
                _ => Some(classify_basin(cfg.landscape, &fs.params)),
            })
            .collect();
        for (fs, b) in finals.iter_mut().zip(basins) {
            fs.basin = b;
        }
    }

    let summary = summarize(cfg, &trajs, &finals);
    Ok(EnsembleResult {
        summary,
        finals,
        trajectories: cfg.keep_trajectories.then_some(trajs),
    })
}

fn summarize(cfg: &EnsembleConfig, trajs: &[Trajectory], finals: &[FinalState]) -> EnsembleSummary {
    // Shared logged grid: every step value that any live trajectory logged.
    let mut grid: Vec<u64> = Vec::new();
    for t in trajs {
        if grid.len() < t.steps.len() {
            grid = t.steps.clone();
        }
    }
    let mut per_step = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(trajs.len());
    for &t in &grid {
        values.clear();
        for traj in trajs {
            // Live at t: diverged paths contribute strictly before the
            // offending step, others up to their final step.
            let alive = match traj.terminated_by {
                Termination::Divergence { step } => t < step,
                _ => t <= traj.final_step,
            };
            if !alive {
                continue;
            }
            if let Ok(k) = traj.steps.binary_search(&t) {
                values.push(traj.f_values[k]);
            }
        }
        if values.is_empty() {
            continue;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let below = values.iter().filter(|v| **v < cfg.frac_threshold).count();
        per_step.push(StepStats {
            t,
            mean_f: mean,
            median_f: sorted_quantile(&values, 0.5),
            q05: sorted_quantile(&values, 0.05),
            q95: sorted_quantile(&values, 0.95),
            frac_below: below as f64 / n as f64,
            live: n as u64,
        });
    }

    let diverged = finals
        .iter()
        .filter(|f| matches!(f.terminated_by, Termination::Divergence { .. }))
        .count() as u64;

    let mut basin_counts = BTreeMap::new();
    if cfg.classify_basins {
        for fs in finals {
            if let Some(basin) = &fs.basin {
                let label = match basin {
                    Basin::Minimum(i) => cfg.landscape.minima()[*i].label.clone(),
                    Basin::Unresolved => "unresolved".to_string(),
                };
                *basin_counts.entry(label).or_insert(0) += 1;
            }
        }
    }

    let rate_fit = fit_window(&per_step, cfg.horizon);

    EnsembleSummary {
        trajectories: cfg.trajectories,
        master_seed: cfg.master_seed,
        per_step,
        basin_counts,
        diverged,
        rate_fit,
        frac_threshold: cfg.frac_threshold,
    }
}

/// Fit the decay rate of the ensemble mean over the middle window
/// `[T/4, 3T/4]`, avoiding burn-in and the floating-point floor. Shrinks
/// the window past exact zeros; `None` when fewer than ten usable points
/// remain.
fn fit_window(per_step: &[StepStats], horizon: u64) -> Option<RateFit> {
    let lo = horizon / 4;
    let hi = 3 * horizon / 4;
    let mut ts = Vec::new();
    let mut means = Vec::new();
    for s in per_step {
        if s.t < lo || s.t > hi {
            continue;
        }
        if s.mean_f <= 0.0 {
            break; // hit the exact-zero floor: shrink the window here
        }
        ts.push(s.t as f64);
        means.push(s.mean_f);
    }
    match fit_decay_rate(&ts, &means) {
        Ok((rho, residual)) => Some(RateFit {
            rho,
            window: (ts[0] as u64, *ts.last().unwrap() as u64),
            residual,
        }),
        Err(_) => None,
    }
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Least-squares fit of `log(values)` against `ts`; returns the
/// exponentiated slope and the RMS residual of the linear fit.
pub fn fit_decay_rate(ts: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if ts.len() < 10 {
        return Err(Error::WindowTooShort { len: ts.len(), min: 10 });
    }
    for (i, v) in values.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::NonPositiveSeries { index: i });
        }
    }
    let n = ts.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean_t = ts.iter().sum::<f64>() / n;
    let mean_y = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, y) in ts.iter().zip(&logs) {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let mut rss = 0.0;
    for (t, y) in ts.iter().zip(&logs) {
        let r = y - (intercept + slope * t);
        rss += r * r;
    }
    Ok((slope.exp(), (rss / n).sqrt()))
}

/// Basin of a final position, by the declared minimum reached under
/// noiseless gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basin {
    /// Index into `landscape.minima()`.
    Minimum(usize),
    Unresolved,
}

/// Steps allowed to the noiseless descent before giving up.
const CLASSIFY_MAX_STEPS: usize = 100_000;
const CLASSIFY_GRAD_TOL: f64 = 1e-10;

/// Classify by running noiseless gradient descent from `theta` with
/// `eta = min(0.01, 1/(2 C_L))` until `|grad f| < 1e-10`, then returning
/// the nearest declared minimum. Ties go to the lower minimum (then
/// declaration order). `Unresolved` is a valid outcome, not an error.
pub fn classify_basin(landscape: &Landscape, theta: &[f64]) -> Basin {
    let minima = landscape.minima();
    if minima.is_empty() || theta.iter().any(|v| !v.is_finite()) {
        return Basin::Unresolved;
    }
    let eta = 0.01f64.min(0.5 / landscape.profile().grad_lipschitz);
    let mut x = theta.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut converged = false;
    for _ in 0..CLASSIFY_MAX_STEPS {
        landscape.grad(&x, &mut g);
        if linalg::norm(&g) < CLASSIFY_GRAD_TOL {
            converged = true;
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Basin::Unresolved;
        }
    }
    if !converged {
        return Basin::Unresolved;
    }
    let dist = |p: &[f64]| -> f64 {
        p.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut best = 0usize;
    let mut best_d = dist(&minima[0].point);
    for (i, m) in minima.iter().enumerate().skip(1) {
        let d = dist(&m.point);
        let tie = (d - best_d).abs() <= 1e-9 * (1.0 + best_d);
        if (tie && m.value < minima[best].value - 1e-15) || (!tie && d < best_d) {
            best = i;
            best_d = d;
        }
    }
    Basin::Minimum(best)
}

/// Parameters of the error-process instrumentation: the run's rate and
/// noise intensity, the Lipschitz constant in force on the small-value
/// region, the trapping levels `eps' < eps` and the noise budget `r`.
#[derive(Debug, Clone, Copy)]
pub struct InstrumentParams {
    pub learning_rate: f64,
    pub grad_lipschitz: f64,
    pub noise_intensity: f64,
    /// Initialization level eps'.
    pub small_level: f64,
    /// Trapping level eps.
    pub level: f64,
    /// Budget r of the cumulative error R_t.
    pub noise_budget: f64,
}

/// The three step weights of the one-step objective expansion. All scale
/// like the learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaWeights {
    /// Descent weight `(1 - C_L eta / 2) eta` on `|grad f|^2`.
    pub descent: f64,
    /// Martingale weight `sqrt(sigma) (1 + C_L eta) eta`.
    pub martingale: f64,
    /// Squared quadratic weight `(C_L sigma / 2) eta^2`.
    pub quadratic_sq: f64,
}

pub fn eta_weights(p: &InstrumentParams) -> EtaWeights {
    let eta = p.learning_rate;
    let cl = p.grad_lipschitz;
    EtaWeights {
        descent: (1.0 - cl * eta / 2.0) * eta,
        martingale: p.noise_intensity.sqrt() * (1.0 + cl * eta) * eta,
        quadratic_sq: cl * p.noise_intensity / 2.0 * eta * eta,
    }
}

/// Cumulative error processes of one instrumented trajectory.
///
/// With the decomposition `g = grad f + sqrt(sigma f) Y`:
/// `M_t` is the weighted martingale sum of `grad f . sqrt(f) Y`,
/// `S_t` the weighted sum of `|sqrt(f) Y|^2`, and `R_t = M_t^2 + S_t`.
/// The event flags are monotone: once false they stay false.
#[derive(Debug, Clone)]
pub struct ErrorProcess {
    pub martingale: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub combined: Vec<f64>,
    /// Objective stayed below eps' through step t.
    pub stayed_small: Vec<bool>,
    /// Objective stayed below eps through step t.
    pub stayed_below_level: Vec<bool>,
    /// Cumulative error stayed below r through step t.
    pub noise_small: Vec<bool>,
    pub weights: EtaWeights,
}

/// Compute the error processes from a trajectory recorded with
/// instrumentation on.
pub fn martingale_instrument(traj: &Trajectory, p: &InstrumentParams) -> Result<ErrorProcess> {
    let log = traj.noise_log.as_ref().ok_or(Error::MissingNoiseLog)?;
    let k = log.grad_dot.len();
    let w = eta_weights(p);
    let sigma = p.noise_intensity;
    let mut proc = ErrorProcess {
        martingale: Vec::with_capacity(k),
        quadratic: Vec::with_capacity(k),
        combined: Vec::with_capacity(k),
        stayed_small: Vec::with_capacity(k),
        stayed_below_level: Vec::with_capacity(k),
        noise_small: Vec::with_capacity(k),
        weights: w,
    };
    let mut m = 0.0f64;
    let mut s = 0.0f64;
    let mut small = true;
    let mut below = true;
    let mut noise_ok = true;
    for i in 0..k {
        if sigma > 0.0 {
            // sqrt(f) Y = noise / sqrt(sigma).
            m += w.martingale * log.grad_dot[i] / sigma.sqrt();
            s += w.quadratic_sq * log.norm_sq[i] / sigma;
        }
        let r = m * m + s;
        small &= log.f_at[i] < p.small_level;
        below &= log.f_at[i] < p.level;
        noise_ok &= r < p.noise_budget;
        proc.martingale.push(m);
        proc.quadratic.push(s);
        proc.combined.push(r);
        proc.stayed_small.push(small);
        proc.stayed_below_level.push(below);
        proc.noise_small.push(noise_ok);
    }
    Ok(proc)
}

/// One-sided check of the escape-probability bound: the empirical fraction
/// of trajectories whose cumulative error exceeded the budget by the final
/// step, against the evaluated right-hand side
/// `(c*/r) sum_i E[1_{E_{i-1}} f(theta_i)]` with the explicit coefficient
/// `c* = 2 C_L eps * martingale_weight^2 + quadratic_weight^2`. When a
/// contraction factor is supplied, the geometric closed form
/// `c* E[f(theta_0)] / (r (1 - rho))` is evaluated too.
#[derive(Debug, Clone)]
pub struct EscapeReport {
    pub empirical: f64,
    pub bound_empirical_sum: f64,
    pub bound_geometric: Option<f64>,
    pub coefficient: f64,
    pub pass: bool,
}

pub fn escape_probability_report(
    trajs: &[Trajectory],
    procs: &[ErrorProcess],
    p: &InstrumentParams,
    contraction: Option<f64>,
) -> EscapeReport {
    assert_eq!(trajs.len(), procs.len());
    let w = eta_weights(p);
    let c_star = 2.0 * p.grad_lipschitz * p.level * w.martingale * w.martingale + w.quadratic_sq;
    let n = trajs.len() as f64;
    let steps = procs.iter().map(|pr| pr.combined.len()).min().unwrap_or(0);

    let escaped = procs.iter().filter(|pr| !pr.noise_small[steps - 1]).count();
    let empirical = escaped as f64 / n;

    // sum over i of the ensemble mean of 1_{E_{i-1}} f(theta_i).
    let mut indicator_sum = 0.0;
    for i in 0..steps {
        let mut acc = 0.0;
        for (traj, pr) in trajs.iter().zip(procs) {
            let flag = if i == 0 { true } else { pr.noise_small[i - 1] };
            if flag {
                acc += traj.f_values[i];
            }
        }
        indicator_sum += acc / n;
    }
    let bound_empirical_sum = c_star / p.noise_budget * indicator_sum;
    let bound_geometric = contraction.map(|rho| {
        let f0 = trajs.iter().map(|t| t.f_values[0]).sum::<f64>() / n;
        c_star * f0 / (p.noise_budget * (1.0 - rho))
    });
    EscapeReport {
        empirical,
        bound_empirical_sum,
        bound_geometric,
        coefficient: c_star,
        pass: empirical <= bound_empirical_sum,
    }
}

/// Successive return times to the sublevel set `{f <= level}`:
/// `tau_0 = 0`, then the first logged step after the previous return with
/// `f <= level`. Empty tail when the set is never revisited.
pub fn hitting_times(traj: &Trajectory, level: f64) -> Vec<u64> {
    let mut taus = vec![0u64];
    let mut last = 0u64;
    for (k, &t) in traj.steps.iter().enumerate() {
        if t > last && traj.f_values[k] <= level {
            taus.push(t);
            last = t;
        }
    }
    taus
}

/// Numerical rank and nullity of a stacked Jacobian (rows x cols), at
/// tolerance `tol` relative to the largest singular value.
pub fn jacobian_rank(jac: &[f64], rows: usize, cols: usize, tol: f64) -> (usize, usize) {
    assert_eq!(jac.len(), rows * cols);
    // Gram matrix J J^T is rows x rows; its eigenvalues are the squared
    // singular values of J.
    let mut gram = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in i..rows {
            let v = linalg::dot(&jac[i * cols..(i + 1) * cols], &jac[j * cols..(j + 1) * cols]);
            gram[i * rows + j] = v;
            gram[j * rows + i] = v;
        }
    }
    let eig = linalg::symmetric_eigenvalues(&gram, rows).expect("gram matrix is symmetric");
    let svals: Vec<f64> = eig.iter().map(|e| e.max(0.0).sqrt()).collect();
    let largest = svals.iter().cloned().fold(0.0f64, f64::max);
    let rank = if largest == 0.0 {
        0
    } else {
        svals.iter().filter(|s| **s > tol * largest).count()
    };
    (rank, cols - rank)
}

/// Rank of the model Jacobian at a near-interpolating point of the toy and
/// the resulting nullity `m - rank` (the dimension of the zero-loss
/// manifold when the data are generic).
pub fn manifold_rank(toy: &RegressionToy, theta: &[f64], tol: f64) -> Result<(usize, usize)> {
    let loss = toy.loss(theta);
    if !(loss < 1e-12) {
        return Err(Error::NotOnManifold { loss, threshold: 1e-12 });
    }
    let jac = toy.model_jacobian(theta);
    Ok(jacobian_rank(&jac, toy.samples(), toy.dim(), tol))
}

/// Per-trajectory supremum statistics of `beta^t f(theta_t)`.
#[derive(Debug, Clone)]
pub struct AsRateStats {
    /// `(sup, step attaining it)` per trajectory.
    pub sups: Vec<(f64, u64)>,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

pub fn as_rate_check(trajs: &[Trajectory], beta: f64) -> AsRateStats {
    let sups: Vec<(f64, u64)> = trajs
        .iter()
        .map(|traj| {
            let mut best = f64::NEG_INFINITY;
            let mut at = 0u64;
            for (k, &t) in traj.steps.iter().enumerate() {
                let v = beta.powf(t as f64) * traj.f_values[k];
                if v > best {
                    best = v;
                    at = t;
                }
            }
            (best, at)
        })
        .collect();
    let mut vals: Vec<f64> = sups.iter().map(|s| s.0).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    AsRateStats {
        median: sorted_quantile(&vals, 0.5),
        q95: sorted_quantile(&vals, 0.95),
        max: *vals.last().unwrap(),
        sups,
    }
}

#[cfg(test)]
mod tests;
