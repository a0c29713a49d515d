//! The experiment runner and the reproduction of the double-well
//! comparison ensembles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use sgdlab_core::analysis::{
    classify_basin, ensemble_run, martingale_instrument, Basin, EnsembleConfig, EnsembleResult,
    InitLaw, InstrumentParams,
};
use sgdlab_core::engine::{RunOptions, Schedule, Termination, Trajectory};
use sgdlab_core::landscapes::{double_well_2d, Landscape};
use sgdlab_core::noise::NoiseModel;
use sgdlab_core::verify;

use crate::config::{CliError, ExperimentConfig};
use crate::output::{atomic_write, fmt_f64, summary_csv};

/// Run a config file: writes `summary.csv`, `summary.json` and (when
/// instrumented) `errorprocess.csv` into the configured output directory.
pub fn run_experiment(config_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path)?;
    let config = ExperimentConfig::parse(&text)?;
    let landscape = config.build_landscape()?;
    let out_dir = PathBuf::from(&config.output_dir);

    let cfg = EnsembleConfig {
        landscape: &landscape,
        model: &config.noise,
        schedule: &config.schedule,
        init: config.init.clone(),
        trajectories: config.trajectories,
        horizon: config.horizon,
        master_seed: config.master_seed,
        options: config.run_options(),
        frac_threshold: config.frac_threshold,
        classify_basins: config.classify_basins,
        keep_trajectories: config.instrument,
    };
    let result = ensemble_run(&cfg).map_err(|e| CliError::Invalid {
        field: "run".to_string(),
        message: e.to_string(),
    })?;

    atomic_write(
        &out_dir.join("summary.csv"),
        summary_csv(&result.summary.per_step).as_bytes(),
    )?;
    atomic_write(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary_json(&config, &result))
            .expect("serializable")
            .as_bytes(),
    )?;
    if config.instrument {
        let csv = error_process_csv(&config, &landscape, result.trajectories.as_ref().unwrap())?;
        atomic_write(&out_dir.join("errorprocess.csv"), csv.as_bytes())?;
    }

    let diverged = result.summary.diverged;
    let frac = diverged as f64 / config.trajectories as f64;
    if frac > config.max_divergent_frac {
        return Err(CliError::Divergence {
            diverged,
            total: config.trajectories,
            tolerated: config.max_divergent_frac,
        });
    }
    Ok(())
}

fn summary_json(config: &ExperimentConfig, result: &EnsembleResult) -> serde_json::Value {
    let summary = &result.summary;
    let echo: BTreeMap<String, String> = config.echo();
    let rate_fit = summary.rate_fit.as_ref().map(|fit| {
        json!({"rho": fit.rho, "window": [fit.window.0, fit.window.1], "residual": fit.residual})
    });
    let final_stats = summary.per_step.last().map(|s| {
        json!({
            "t": s.t,
            "mean_f": s.mean_f,
            "median_f": s.median_f,
            "q05": s.q05,
            "q95": s.q95,
            "frac_below_threshold": s.frac_below,
        })
    });
    json!({
        "config": echo,
        "master_seed": summary.master_seed,
        "trajectories": summary.trajectories,
        "diverged": summary.diverged,
        "basin_counts": summary.basin_counts,
        "rate_fit": rate_fit,
        "final": final_stats,
    })
}

fn error_process_csv(
    config: &ExperimentConfig,
    landscape: &Landscape,
    trajs: &[Trajectory],
) -> Result<String, CliError> {
    let params = InstrumentParams {
        learning_rate: config.schedule.rate(0),
        grad_lipschitz: config
            .instrument_c_lipschitz
            .unwrap_or(landscape.profile().grad_lipschitz),
        noise_intensity: config.noise.sigma(),
        small_level: config.instrument_eps_prime,
        level: config.instrument_eps,
        noise_budget: config.instrument_r,
    };
    let procs = trajs
        .iter()
        .map(|t| martingale_instrument(t, &params))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Invalid { field: "instrument".into(), message: e.to_string() })?;
    let steps = procs.iter().map(|p| p.martingale.len()).min().unwrap_or(0);
    let n = procs.len() as f64;
    let mut out = String::from("t,mean_m,mean_s,mean_r,frac_noise_small,frac_stayed_small\n");
    for i in 0..steps {
        let mut m = 0.0;
        let mut s = 0.0;
        let mut r = 0.0;
        let mut noise_ok = 0u64;
        let mut small = 0u64;
        for p in &procs {
            m += p.martingale[i];
            s += p.quadratic[i];
            r += p.combined[i];
            noise_ok += p.noise_small[i] as u64;
            small += p.stayed_small[i] as u64;
        }
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            fmt_f64(m / n),
            fmt_f64(s / n),
            fmt_f64(r / n),
            fmt_f64(noise_ok as f64 / n),
            fmt_f64(small as f64 / n),
        ));
    }
    Ok(out)
}

/// Snapshot statistics of one comparison ensemble at one horizon.
#[derive(Debug, Clone)]
pub struct SnapshotStats {
    pub basin_counts: BTreeMap<String, u64>,
    pub diverged: u64,
    /// Fraction classified into the deep well with `f` below the basin
    /// threshold.
    pub global_and_small: f64,
    /// Per-basin variance of the x coordinate.
    pub x_variance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct ReproduceStats {
    pub sigma_ml: f64,
    pub sigma_homogeneous: f64,
    pub ridge_x: f64,
    pub f_ridge: f64,
    /// Keyed by `{combo}_T{horizon}`.
    pub snapshots: BTreeMap<String, SnapshotStats>,
}

/// Reproduce the three noise/schedule comparison ensembles on the tilted
/// double well at horizons 300 and 1000 (N = 1000, alpha = 0.25,
/// eta = 0.05, sigma-tilde = 4, start (3, 0)): per-combination final
/// positions, x-coordinate histograms (81 bins over [-2.5, 3.5]) and a
/// basin-count JSON.
///
/// The homogeneous noise level is matched to the value-scaled noise at the
/// ridge between the wells: per coordinate both have standard deviation
/// `sigma_tilde * sqrt(f(ridge))` there.
pub fn reproduce_figure(
    out_dir: &Path,
    master_seed: u64,
    decay: Option<(f64, f64)>,
) -> Result<ReproduceStats, CliError> {
    let alpha = 0.25;
    let eta = 0.05;
    let sigma_tilde = 4.0;
    let n_traj = 1000u64;
    let basin_threshold = 1e-3;
    let landscape =
        double_well_2d(alpha).map_err(|e| CliError::Invalid { field: "alpha".into(), message: e.to_string() })?;
    let dim = landscape.dim() as f64;

    let x_minus = landscape.minima()[0].point[0];
    let x_plus = landscape.minima()[1].point[0];
    let ridge_x = verify::section_interior_max(&landscape, x_minus, x_plus);
    let f_ridge = landscape.eval(&[ridge_x, 0.0]);

    // Total second moments in the estimator parametrization: the
    // value-scaled kind carries sigma * f per step, the homogeneous kind
    // sigma^2; matching per-coordinate intensity at the ridge gives the
    // factors below.
    let sigma_ml = dim * sigma_tilde * sigma_tilde;
    let sigma_hom = dim.sqrt() * sigma_tilde * f_ridge.sqrt();

    let (decay_scale, decay_offset) = decay.unwrap_or((20.0, 5.0));
    let combos: Vec<(&str, NoiseModel, Schedule)> = vec![
        (
            "hom_const",
            NoiseModel::Homogeneous { sigma: sigma_hom },
            Schedule::Constant { rate: eta },
        ),
        (
            "hom_decay",
            NoiseModel::Homogeneous { sigma: sigma_hom },
            Schedule::Decay { scale: decay_scale, rate: eta, offset: decay_offset },
        ),
        (
            "ml_const",
            NoiseModel::MlGaussian { sigma: sigma_ml },
            Schedule::Constant { rate: eta },
        ),
    ];

    let mut stats = ReproduceStats {
        sigma_ml,
        sigma_homogeneous: sigma_hom,
        ridge_x,
        f_ridge,
        snapshots: BTreeMap::new(),
    };

    for (idx, (name, model, schedule)) in combos.iter().enumerate() {
        let cfg = EnsembleConfig {
            landscape: &landscape,
            model,
            schedule,
            init: InitLaw::Point(vec![3.0, 0.0]),
            trajectories: n_traj,
            horizon: 1000,
            master_seed: master_seed.wrapping_add(idx as u64),
            options: RunOptions { record_params: true, ..RunOptions::default() },
            frac_threshold: basin_threshold,
            classify_basins: false,
            keep_trajectories: true,
        };
        let result = ensemble_run(&cfg).map_err(|e| CliError::Invalid {
            field: "reproduce".into(),
            message: e.to_string(),
        })?;
        let trajs = result.trajectories.as_ref().unwrap();
        for horizon in [300u64, 1000] {
            let key = format!("{name}_T{horizon}");
            let snap = snapshot(&landscape, trajs, horizon, basin_threshold);
            write_positions(out_dir, &key, &landscape, trajs, horizon)?;
            write_histogram(out_dir, &key, trajs, horizon)?;
            stats.snapshots.insert(key, snap);
        }
    }

    let mut combos_json = serde_json::Map::new();
    for (key, snap) in &stats.snapshots {
        combos_json.insert(
            key.clone(),
            json!({
                "basin_counts": snap.basin_counts,
                "diverged": snap.diverged,
                "global_and_small": snap.global_and_small,
                "x_variance": snap.x_variance,
            }),
        );
    }
    let doc = json!({
        "seed": master_seed,
        "alpha": alpha,
        "eta": eta,
        "sigma_tilde": sigma_tilde,
        "sigma_ml": sigma_ml,
        "sigma_homogeneous": sigma_hom,
        "ridge_x": ridge_x,
        "f_ridge": f_ridge,
        "decay": {"scale": decay_scale, "offset": decay_offset},
        "trajectories": n_traj,
        "basin_f_threshold": basin_threshold,
        "combos": serde_json::Value::Object(combos_json),
    });
    atomic_write(
        &out_dir.join("basins.json"),
        serde_json::to_string_pretty(&doc).expect("serializable").as_bytes(),
    )?;
    Ok(stats)
}

/// Position of a trajectory at a snapshot step, when it was still live.
fn position_at(traj: &Trajectory, t: u64) -> Option<&[f64]> {
    let alive = match traj.terminated_by {
        Termination::Divergence { step } => t < step,
        _ => t <= traj.final_step,
    };
    if !alive {
        return None;
    }
    let k = traj.steps.binary_search(&t).ok()?;
    traj.params_at(k)
}

fn snapshot(
    landscape: &Landscape,
    trajs: &[Trajectory],
    t: u64,
    basin_threshold: f64,
) -> SnapshotStats {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut diverged = 0u64;
    let mut deep_and_small = 0u64;
    let mut x_by_basin: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for traj in trajs {
        let Some(pos) = position_at(traj, t) else {
            diverged += 1;
            continue;
        };
        let label = match classify_basin(landscape, pos) {
            Basin::Minimum(i) => landscape.minima()[i].label.clone(),
            Basin::Unresolved => "unresolved".to_string(),
        };
        if label == "x_minus" && landscape.eval(pos) < basin_threshold {
            deep_and_small += 1;
        }
        x_by_basin.entry(label.clone()).or_default().push(pos[0]);
        *counts.entry(label).or_insert(0) += 1;
    }
    let x_variance = x_by_basin
        .into_iter()
        .map(|(label, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (label, var)
        })
        .collect();
    SnapshotStats {
        basin_counts: counts,
        diverged,
        global_and_small: deep_and_small as f64 / trajs.len() as f64,
        x_variance,
    }
}

fn write_positions(
    out_dir: &Path,
    key: &str,
    landscape: &Landscape,
    trajs: &[Trajectory],
    t: u64,
) -> Result<(), CliError> {
    let mut out = String::from("x,y,f,basin\n");
    for traj in trajs {
        let Some(pos) = position_at(traj, t) else { continue };
        let label = match classify_basin(landscape, pos) {
            Basin::Minimum(i) => landscape.minima()[i].label.clone(),
            Basin::Unresolved => "unresolved".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(pos[0]),
            fmt_f64(pos[1]),
            fmt_f64(landscape.eval(pos)),
            label
        ));
    }
    atomic_write(&out_dir.join(format!("{key}_positions.csv")), out.as_bytes())?;
    Ok(())
}

/// Histogram bin count and range, fixed in code so outputs stay comparable
/// across runs.
pub const HIST_BINS: usize = 81;
pub const HIST_RANGE: (f64, f64) = (-2.5, 3.5);

fn write_histogram(
    out_dir: &Path,
    key: &str,
    trajs: &[Trajectory],
    t: u64,
) -> Result<(), CliError> {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0u64; HIST_BINS];
    for traj in trajs {
        let Some(pos) = position_at(traj, t) else { continue };
        let x = pos[0];
        if x < lo || x >= hi {
            continue;
        }
        let bin = ((x - lo) / width) as usize;
        counts[bin.min(HIST_BINS - 1)] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(lo + width * i as f64),
            fmt_f64(lo + width * (i + 1) as f64),
            c
        ));
    }
    atomic_write(&out_dir.join(format!("{key}_hist.csv")), out.as_bytes())?;
    Ok(())
}

/// Parse a landscape spec of the form `name` or `name(a,b,...)` and print
/// its declared and estimated constants.
pub fn constants_report(spec: &str) -> Result<String, CliError> {
    let landscape = parse_landscape_spec(spec)?;
    let profile = landscape.profile();
    let region = landscape.working_box();
    let mut out = String::new();
    out.push_str(&format!("landscape: {}\n", landscape.name()));
    out.push_str(&format!("dim: {}\n", landscape.dim()));
    out.push_str(&format!(
        "declared C_L: {} ({})\n",
        profile.grad_lipschitz,
        if profile.grad_lipschitz_estimated { "estimated at construction" } else { "closed form" }
    ));
    let pair = verify::estimate_lipschitz(&landscape, region, 4000, 17);
    out.push_str(&format!("pair-sampled C_L (x1.1): {:.6}\n", pair.value));
    let hess = verify::hessian_norm_sup(&landscape, region, 2000, 17);
    out.push_str(&format!("hessian-sup C_L (x1.1): {:.6}\n", hess.value));
    match verify::estimate_lojasiewicz(&landscape, region, 200_000, 1e-9, None, 17) {
        Ok(est) => out.push_str(&format!("lojasiewicz (box infimum): {:.6}\n", est.value)),
        Err(e) => out.push_str(&format!("lojasiewicz (box infimum): n/a ({e})\n")),
    }
    match verify::estimate_lojasiewicz(&landscape, region, 200_000, 1e-9, Some(0.5), 17) {
        Ok(est) => out.push_str(&format!("lojasiewicz on {{f < 0.5}}: {:.6}\n", est.value)),
        Err(e) => out.push_str(&format!("lojasiewicz on {{f < 0.5}}: n/a ({e})\n")),
    }
    match verify::estimate_lojasiewicz(&landscape, region, 200_000, 1.0, None, 17) {
        Ok(est) => out.push_str(&format!("lojasiewicz on {{f >= 1}}: {:.6}\n", est.value)),
        Err(e) => out.push_str(&format!("lojasiewicz on {{f >= 1}}: n/a ({e})\n")),
    }
    if let (Some(lam), Some(eps)) = (profile.low_constant, profile.low_level) {
        out.push_str(&format!("declared local constant: {lam} on {{f < {eps}}}\n"));
    }
    if let Some(big) = profile.high_constant {
        out.push_str(&format!(
            "declared {} constant: {big}\n",
            if profile.high_is_global { "global" } else { "large-value" }
        ));
    }
    Ok(out)
}

fn parse_landscape_spec(spec: &str) -> Result<Landscape, CliError> {
    use sgdlab_core::landscapes::CatalogId;
    let spec = spec.trim();
    let (name, args) = match spec.split_once('(') {
        None => (spec, Vec::new()),
        Some((name, rest)) => {
            let inner = rest.strip_suffix(')').ok_or_else(|| {
                CliError::Invalid { field: "landscape".into(), message: "unbalanced parens".into() }
            })?;
            let args: Vec<String> =
                inner.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            (name, args)
        }
    };
    let num = |i: usize| -> Result<f64, CliError> {
        args.get(i)
            .ok_or_else(|| CliError::Invalid {
                field: "landscape".into(),
                message: format!("`{name}` needs {} argument(s)", i + 1),
            })?
            .parse()
            .map_err(|_| CliError::Invalid {
                field: "landscape".into(),
                message: format!("argument {} of `{name}` is not a number", i + 1),
            })
    };
    let id = match name {
        "quadratic" => CatalogId::Quadratic { dim: num(0)? as usize },
        "double_well_2d" => CatalogId::DoubleWell2d { alpha: num(0)? },
        "tilted_quartic_1d" => CatalogId::TiltedQuartic1d { alpha: num(0)? },
        "sin_lattice" => CatalogId::SinLattice,
        "perturbed_quadratic" => CatalogId::PerturbedQuadratic { eps: num(0)? },
        "nonexample_1" => CatalogId::Nonexample1,
        "nonexample_2" => CatalogId::Nonexample2,
        "regression_toy" => CatalogId::RegressionToy {
            n: num(0)? as usize,
            m: num(1)? as usize,
            seed: num(2)? as u64,
        },
        "cross_entropy_toy" => CatalogId::CrossEntropyToy { k: num(0)? as usize },
        other => {
            return Err(CliError::Invalid {
                field: "landscape".into(),
                message: format!("unknown landscape `{other}`"),
            })
        }
    };
    sgdlab_core::landscapes::make_landscape(&id)
        .map_err(|e| CliError::Invalid { field: "landscape".into(), message: e.to_string() })
}
