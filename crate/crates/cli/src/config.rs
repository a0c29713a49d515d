//! Flat key-value experiment configuration.
//!
//! One `key = value` per line, dotted section keys, `#` comments. Chosen
//! for zero-dependency parsing and exact round-trips: the materialized
//! form (defaults filled in) parses back to the identical configuration
//! and is echoed verbatim into every output's JSON sidecar.

use std::collections::BTreeMap;

use sgdlab_core::analysis::InitLaw;
use sgdlab_core::engine::{RunOptions, Schedule, DEFAULT_DIVERGENCE_CAP};
use sgdlab_core::landscapes::{make_landscape, CatalogId, Landscape};
use sgdlab_core::noise::NoiseModel;

/// Config or usage failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Syntax error in a config file (exit 2).
    Parse(String),
    /// Well-formed but invalid configuration (exit 3).
    Invalid { field: String, message: String },
    /// Diverged trajectories beyond the tolerated fraction (exit 4).
    Divergence { diverged: u64, total: u64, tolerated: f64 },
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Invalid { field, message } => write!(f, "invalid config `{field}`: {message}"),
            CliError::Divergence { diverged, total, tolerated } => write!(
                f,
                "{diverged}/{total} trajectories diverged (tolerated fraction {tolerated})"
            ),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Invalid { .. } => 3,
            CliError::Divergence { .. } => 4,
            CliError::Io(_) => 1,
        }
    }

    /// Machine-readable error object.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Parse(m) => serde_json::json!({"error": "parse", "message": m}),
            CliError::Invalid { field, message } => {
                serde_json::json!({"error": "invalid_config", "field": field, "message": message})
            }
            CliError::Divergence { diverged, total, tolerated } => serde_json::json!({
                "error": "divergence",
                "diverged": diverged,
                "total": total,
                "tolerated_fraction": tolerated,
            }),
            CliError::Io(e) => serde_json::json!({"error": "io", "message": e.to_string()}),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid { field: field.to_string(), message: message.into() }
}

/// Raw parsed key-value map with typed accessors that record which keys
/// were consumed (leftovers are rejected).
struct Raw {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Parse(format!("line {}: missing `=`", lineno + 1)))?;
            let key = key.trim().to_string();
            let value = match value.find(" #") {
                Some(i) => value[..i].trim().to_string(),
                None => value.trim().to_string(),
            };
            if key.is_empty() {
                return Err(CliError::Parse(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::Parse(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Raw { map, used: Default::default() })
    }

    fn get(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| invalid(key, "missing required key"))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| invalid(key, format!("not a number: `{s}`"))),
        }
    }

    fn f64_req(&self, key: &str) -> Result<f64, CliError> {
        let s = self.require(key)?;
        s.parse().map_err(|_| invalid(key, format!("not a number: `{s}`")))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| invalid(key, format!("not an integer: `{s}`"))),
        }
    }

    fn usize_req(&self, key: &str) -> Result<usize, CliError> {
        let s = self.require(key)?;
        s.parse().map_err(|_| invalid(key, format!("not an integer: `{s}`")))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(invalid(key, format!("expected true/false, got `{s}`"))),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| invalid(key, format!("not a comma list of numbers: `{s}`"))),
        }
    }

    fn reject_unknown(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        for key in self.map.keys() {
            if !used.contains(key) {
                return Err(invalid(key, "unknown key"));
            }
        }
        Ok(())
    }
}

/// Fully resolved experiment configuration. All defaults are materialized;
/// `echo()` serializes back to the flat format losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub landscape: CatalogId,
    pub noise: NoiseModel,
    pub schedule: Schedule,
    pub init: InitLaw,
    pub trajectories: u64,
    pub horizon: u64,
    pub master_seed: u64,
    pub instrument: bool,
    pub instrument_eps: f64,
    pub instrument_eps_prime: f64,
    pub instrument_r: f64,
    pub instrument_c_lipschitz: Option<f64>,
    pub target_f: Option<f64>,
    pub divergence_cap: f64,
    pub max_divergent_frac: f64,
    pub frac_threshold: f64,
    pub basin_threshold: f64,
    pub rank_tol: f64,
    pub classify_basins: bool,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw = Raw::parse(text)?;

        let landscape = match raw.require("landscape.name")? {
            "quadratic" => CatalogId::Quadratic { dim: raw.usize_req("landscape.dim")? },
            "double_well_2d" => CatalogId::DoubleWell2d { alpha: raw.f64_req("landscape.alpha")? },
            "tilted_quartic_1d" => {
                CatalogId::TiltedQuartic1d { alpha: raw.f64_req("landscape.alpha")? }
            }
            "sin_lattice" => CatalogId::SinLattice,
            "perturbed_quadratic" => {
                CatalogId::PerturbedQuadratic { eps: raw.f64_req("landscape.eps")? }
            }
            "nonexample_1" => CatalogId::Nonexample1,
            "nonexample_2" => CatalogId::Nonexample2,
            "regression_toy" => CatalogId::RegressionToy {
                n: raw.usize_req("landscape.n")?,
                m: raw.usize_req("landscape.m")?,
                seed: raw.u64_or("landscape.seed", 0)?,
            },
            "cross_entropy_toy" => CatalogId::CrossEntropyToy { k: raw.usize_req("landscape.k")? },
            other => return Err(invalid("landscape.name", format!("unknown landscape `{other}`"))),
        };

        let noise = match raw.get("noise.kind").unwrap_or("exact") {
            "exact" => NoiseModel::Exact,
            "homogeneous" => NoiseModel::Homogeneous { sigma: raw.f64_req("noise.sigma")? },
            "ml_gaussian" => NoiseModel::MlGaussian { sigma: raw.f64_req("noise.sigma")? },
            "ml_rademacher" => NoiseModel::MlRademacher { sigma: raw.f64_req("noise.sigma")? },
            "random_selection" => {
                NoiseModel::RandomSelection { batch: raw.u64_or("noise.batch", 1)? as usize }
            }
            other => return Err(invalid("noise.kind", format!("unknown noise kind `{other}`"))),
        };

        let schedule = match raw.get("schedule.kind").unwrap_or("constant") {
            "constant" => Schedule::Constant { rate: raw.f64_req("schedule.rate")? },
            "power" => Schedule::Power {
                rate0: raw.f64_req("schedule.rate0")?,
                offset: raw.f64_or("schedule.offset", 1.0)?,
                exponent: raw.f64_req("schedule.exponent")?,
            },
            "decay" => Schedule::Decay {
                scale: raw.f64_req("schedule.scale")?,
                rate: raw.f64_req("schedule.rate")?,
                offset: raw.f64_req("schedule.offset")?,
            },
            "step" => {
                let rates = raw
                    .floats("schedule.rates")?
                    .ok_or_else(|| invalid("schedule.rates", "missing required key"))?;
                let switches: Vec<u64> = raw
                    .get("schedule.switches")
                    .ok_or_else(|| invalid("schedule.switches", "missing required key"))?
                    .split(',')
                    .map(|p| p.trim().parse::<u64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| invalid("schedule.switches", "not a comma list of integers"))?;
                Schedule::Step { switches, rates }
            }
            other => return Err(invalid("schedule.kind", format!("unknown schedule `{other}`"))),
        };
        schedule
            .validate()
            .map_err(|e| invalid("schedule", e.to_string()))?;

        let init = match raw.get("init.kind").unwrap_or("point") {
            "point" => InitLaw::Point(
                raw.floats("init.point")?
                    .ok_or_else(|| invalid("init.point", "missing required key"))?,
            ),
            "gaussian" => InitLaw::Gaussian {
                center: raw
                    .floats("init.center")?
                    .ok_or_else(|| invalid("init.center", "missing required key"))?,
                std: raw.f64_req("init.std")?,
            },
            other => return Err(invalid("init.kind", format!("unknown init law `{other}`"))),
        };

        let instrument = raw.bool_or("run.instrument", false)?;
        let config = ExperimentConfig {
            landscape,
            noise,
            schedule,
            init,
            trajectories: raw.u64_or("run.trajectories", 1)?,
            horizon: raw.u64_or("run.horizon", 1000)?,
            master_seed: raw.u64_or("run.seed", 0)?,
            instrument,
            instrument_eps: raw.f64_or("instrument.eps", 0.5)?,
            instrument_eps_prime: raw.f64_or("instrument.eps_prime", 0.2)?,
            instrument_r: raw.f64_or("instrument.r", 0.04)?,
            instrument_c_lipschitz: match raw.get("instrument.c_lipschitz") {
                None | Some("declared") => None,
                Some(s) => Some(
                    s.parse()
                        .map_err(|_| invalid("instrument.c_lipschitz", "not a number"))?,
                ),
            },
            target_f: match raw.get("run.target_f") {
                None | Some("none") => None,
                Some(s) => {
                    Some(s.parse().map_err(|_| invalid("run.target_f", "not a number"))?)
                }
            },
            divergence_cap: raw.f64_or("run.divergence_cap", DEFAULT_DIVERGENCE_CAP)?,
            max_divergent_frac: raw.f64_or("run.max_divergent_frac", 0.0)?,
            frac_threshold: raw.f64_or("thresholds.frac_f", 1e-3)?,
            basin_threshold: raw.f64_or("thresholds.basin_f", 1e-3)?,
            rank_tol: raw.f64_or("thresholds.rank_tol", 1e-8)?,
            classify_basins: raw.bool_or("classify.basins", false)?,
            output_dir: raw
                .get("output.dir")
                .map(str::to_string)
                .or_else(|| std::env::var("SGDLAB_OUT").ok())
                .unwrap_or_else(|| "out".to_string()),
        };
        raw.reject_unknown()?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.trajectories == 0 {
            return Err(invalid("run.trajectories", "need at least one trajectory"));
        }
        if self.horizon == 0 {
            return Err(invalid("run.horizon", "need at least one step"));
        }
        let landscape = self.build_landscape()?;
        let dim = landscape.dim();
        let init_dim = match &self.init {
            InitLaw::Point(p) => p.len(),
            InitLaw::Gaussian { center, .. } => center.len(),
        };
        if init_dim != dim {
            return Err(invalid(
                "init",
                format!("dimension {init_dim} does not match landscape dimension {dim}"),
            ));
        }
        Ok(())
    }

    pub fn build_landscape(&self) -> Result<Landscape, CliError> {
        make_landscape(&self.landscape).map_err(|e| invalid("landscape", e.to_string()))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            instrument: self.instrument,
            record_params: false,
            target_f: self.target_f,
            divergence_cap: self.divergence_cap,
        }
    }

    /// Materialized flat form: every key explicit, sorted, lossless.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.landscape {
            CatalogId::Quadratic { dim } => {
                put("landscape.name", "quadratic".into());
                put("landscape.dim", dim.to_string());
            }
            CatalogId::DoubleWell2d { alpha } => {
                put("landscape.name", "double_well_2d".into());
                put("landscape.alpha", alpha.to_string());
            }
            CatalogId::TiltedQuartic1d { alpha } => {
                put("landscape.name", "tilted_quartic_1d".into());
                put("landscape.alpha", alpha.to_string());
            }
            CatalogId::SinLattice => put("landscape.name", "sin_lattice".into()),
            CatalogId::PerturbedQuadratic { eps } => {
                put("landscape.name", "perturbed_quadratic".into());
                put("landscape.eps", eps.to_string());
            }
            CatalogId::Nonexample1 => put("landscape.name", "nonexample_1".into()),
            CatalogId::Nonexample2 => put("landscape.name", "nonexample_2".into()),
            CatalogId::RegressionToy { n, m: mm, seed } => {
                put("landscape.name", "regression_toy".into());
                put("landscape.n", n.to_string());
                put("landscape.m", mm.to_string());
                put("landscape.seed", seed.to_string());
            }
            CatalogId::CrossEntropyToy { k } => {
                put("landscape.name", "cross_entropy_toy".into());
                put("landscape.k", k.to_string());
            }
        }
        put("noise.kind", self.noise.config_kind().into());
        match &self.noise {
            NoiseModel::Exact => {}
            NoiseModel::RandomSelection { batch } => put("noise.batch", batch.to_string()),
            other => put("noise.sigma", other.sigma().to_string()),
        }
        match &self.schedule {
            Schedule::Constant { rate } => {
                put("schedule.kind", "constant".into());
                put("schedule.rate", rate.to_string());
            }
            Schedule::Power { rate0, offset, exponent } => {
                put("schedule.kind", "power".into());
                put("schedule.rate0", rate0.to_string());
                put("schedule.offset", offset.to_string());
                put("schedule.exponent", exponent.to_string());
            }
            Schedule::Decay { scale, rate, offset } => {
                put("schedule.kind", "decay".into());
                put("schedule.scale", scale.to_string());
                put("schedule.rate", rate.to_string());
                put("schedule.offset", offset.to_string());
            }
            Schedule::Step { switches, rates } => {
                put("schedule.kind", "step".into());
                put(
                    "schedule.switches",
                    switches.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
                );
                put(
                    "schedule.rates",
                    rates.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                );
            }
        }
        match &self.init {
            InitLaw::Point(p) => {
                put("init.kind", "point".into());
                put("init.point", p.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
            }
            InitLaw::Gaussian { center, std } => {
                put("init.kind", "gaussian".into());
                put(
                    "init.center",
                    center.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                );
                put("init.std", std.to_string());
            }
        }
        put("run.trajectories", self.trajectories.to_string());
        put("run.horizon", self.horizon.to_string());
        put("run.seed", self.master_seed.to_string());
        put("run.instrument", self.instrument.to_string());
        put("run.target_f", self.target_f.map_or("none".into(), |v| v.to_string()));
        put("run.divergence_cap", self.divergence_cap.to_string());
        put("run.max_divergent_frac", self.max_divergent_frac.to_string());
        if self.instrument {
            put("instrument.eps", self.instrument_eps.to_string());
            put("instrument.eps_prime", self.instrument_eps_prime.to_string());
            put("instrument.r", self.instrument_r.to_string());
            put(
                "instrument.c_lipschitz",
                self.instrument_c_lipschitz.map_or("declared".into(), |v| v.to_string()),
            );
        }
        put("thresholds.frac_f", self.frac_threshold.to_string());
        put("thresholds.basin_f", self.basin_threshold.to_string());
        put("thresholds.rank_tol", self.rank_tol.to_string());
        put("classify.basins", self.classify_basins.to_string());
        put("output.dir", self.output_dir.clone());
        m
    }

    /// The materialized flat text.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.echo() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
