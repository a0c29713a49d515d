//! Objective-function catalog.
//!
//! Every landscape exposes an exact value, an exact gradient, a profile of
//! certified constants and, where known, its minimizers. All catalog
//! objectives are nonnegative with `inf f = 0` (shifted where necessary).
//! Landscapes are immutable after construction and safe to share across
//! trajectory workers.

mod toy;

pub use toy::RegressionToy;

use crate::error::{Error, Result};
use crate::linalg;

/// Axis-aligned box, the region on which constants are certified.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Region { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// Uniform sample from the box.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
            .collect()
    }
}

/// Certified constants of an objective.
///
/// `low_constant` is a Lojasiewicz constant valid on `{f < low_level}`;
/// `high_constant` one valid on `{f >= high_level}` or globally when
/// `high_is_global` is set. `grad_lipschitz` is the one-sided Lipschitz
/// constant of the gradient, certified on `working_box`.
#[derive(Debug, Clone, PartialEq)]
pub struct LojasiewiczProfile {
    pub low_constant: Option<f64>,
    pub low_level: Option<f64>,
    pub high_constant: Option<f64>,
    pub high_level: Option<f64>,
    pub high_is_global: bool,
    pub tube_radius: Option<f64>,
    pub grad_lipschitz: f64,
    pub grad_lipschitz_estimated: bool,
    pub working_box: Region,
}

/// A known minimizer (a point; manifold minima are tagged by a label).
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub label: String,
}

/// Catalog identifier with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CatalogId {
    Quadratic { dim: usize },
    DoubleWell2d { alpha: f64 },
    TiltedQuartic1d { alpha: f64 },
    SinLattice,
    PerturbedQuadratic { eps: f64 },
    Nonexample1,
    Nonexample2,
    RegressionToy { n: usize, m: usize, seed: u64 },
    CrossEntropyToy { k: usize },
}

impl CatalogId {
    pub fn name(&self) -> String {
        match self {
            CatalogId::Quadratic { dim } => format!("quadratic({dim})"),
            CatalogId::DoubleWell2d { alpha } => format!("double_well_2d({alpha})"),
            CatalogId::TiltedQuartic1d { alpha } => format!("tilted_quartic_1d({alpha})"),
            CatalogId::SinLattice => "sin_lattice".to_string(),
            CatalogId::PerturbedQuadratic { eps } => format!("perturbed_quadratic({eps})"),
            CatalogId::Nonexample1 => "nonexample_1".to_string(),
            CatalogId::Nonexample2 => "nonexample_2".to_string(),
            CatalogId::RegressionToy { n, m, seed } => {
                format!("regression_toy(n={n}, m={m}, seed={seed})")
            }
            CatalogId::CrossEntropyToy { k } => format!("cross_entropy_toy({k})"),
        }
    }
}

/// An objective with exact gradient and certified constants.
#[derive(Debug, Clone)]
pub struct Landscape {
    id: CatalogId,
    dim: usize,
    profile: LojasiewiczProfile,
    minima: Vec<Minimum>,
    toy: Option<RegressionToy>,
    /// Additive shift making `inf f = 0` (the wells' `c_alpha`).
    shift: f64,
}

/// Default half-width of the certified working box.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 5.0;

/// Build a catalog landscape. This is the single catalog entry point; the
/// parameter ranges are documented per entry.
pub fn make_landscape(id: &CatalogId) -> Result<Landscape> {
    match id {
        CatalogId::Quadratic { dim } => quadratic(*dim),
        CatalogId::DoubleWell2d { alpha } => double_well_2d(*alpha),
        CatalogId::TiltedQuartic1d { alpha } => tilted_quartic_1d(*alpha),
        CatalogId::SinLattice => Ok(sin_lattice()),
        CatalogId::PerturbedQuadratic { eps } => perturbed_quadratic(*eps),
        CatalogId::Nonexample1 => Ok(nonexample(1)),
        CatalogId::Nonexample2 => Ok(nonexample(2)),
        CatalogId::RegressionToy { n, m, seed } => regression_toy(*n, *m, *seed),
        CatalogId::CrossEntropyToy { k } => cross_entropy_toy(*k),
    }
}

impl Landscape {
    pub fn id(&self) -> &CatalogId {
        &self.id
    }

    pub fn name(&self) -> String {
        self.id.name()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &LojasiewiczProfile {
        &self.profile
    }

    pub fn minima(&self) -> &[Minimum] {
        &self.minima
    }

    /// Per-sample loss structure, present for the regression toy only.
    pub fn per_sample(&self) -> Option<&RegressionToy> {
        self.toy.as_ref()
    }

    pub fn working_box(&self) -> &Region {
        &self.profile.working_box
    }

    /// Objective value; nonnegative on the whole domain.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim, "dimension mismatch");
        match &self.id {
            CatalogId::Quadratic { .. } => 0.5 * linalg::dot(theta, theta),
            CatalogId::DoubleWell2d { alpha } => {
                let (x, y) = (theta[0], theta[1]);
                x.powi(4) / 4.0 - x * x + alpha * x + y * y + self.shift
            }
            CatalogId::TiltedQuartic1d { alpha } => {
                let x = theta[0];
                let q = x * x - 1.0;
                q * q / 4.0 + alpha * x + self.shift
            }
            CatalogId::SinLattice => theta[0].sin() + theta[1].sin() + 2.0,
            CatalogId::PerturbedQuadratic { eps } => {
                let x = theta[0];
                let s = (x / eps).sin();
                x * x + 2.0 * eps * s * s
            }
            CatalogId::Nonexample1 => {
                let x = theta[0];
                let s = x.sin();
                1.0 + s * s - 1.0 / (x * x + 1.0)
            }
            CatalogId::Nonexample2 => {
                let x = theta[0];
                let s = x.sin();
                1.0 + x * x * s * s - 1.0 / (x * x + 1.0)
            }
            CatalogId::RegressionToy { .. } => self.toy.as_ref().unwrap().loss(theta),
            CatalogId::CrossEntropyToy { .. } => {
                cross_entropy_loss(theta, 1).expect("finite logits").0
            }
        }
    }

    /// Exact gradient, written into `out`.
    pub fn grad(&self, theta: &[f64], out: &mut [f64]) {
        assert_eq!(theta.len(), self.dim, "dimension mismatch");
        assert_eq!(out.len(), self.dim, "dimension mismatch");
        match &self.id {
            CatalogId::Quadratic { .. } => out.copy_from_slice(theta),
            CatalogId::DoubleWell2d { alpha } => {
                let (x, y) = (theta[0], theta[1]);
                out[0] = x * x * x - 2.0 * x + alpha;
                out[1] = 2.0 * y;
            }
            CatalogId::TiltedQuartic1d { alpha } => {
                let x = theta[0];
                out[0] = x * x * x - x + alpha;
            }
            CatalogId::SinLattice => {
                out[0] = theta[0].cos();
                out[1] = theta[1].cos();
            }
            CatalogId::PerturbedQuadratic { eps } => {
                let x = theta[0];
                out[0] = 2.0 * x + 2.0 * (2.0 * x / eps).sin();
            }
            CatalogId::Nonexample1 => {
                let x = theta[0];
                let d = x * x + 1.0;
                out[0] = (2.0 * x).sin() + 2.0 * x / (d * d);
            }
            CatalogId::Nonexample2 => {
                let x = theta[0];
                let s = x.sin();
                let d = x * x + 1.0;
                out[0] = 2.0 * x * s * s + x * x * (2.0 * x).sin() + 2.0 * x / (d * d);
            }
            CatalogId::RegressionToy { .. } => self.toy.as_ref().unwrap().grad(theta, out),
            CatalogId::CrossEntropyToy { .. } => {
                let (_, g) = cross_entropy_loss(theta, 1).expect("finite logits");
                out.copy_from_slice(&g);
            }
        }
    }

    pub fn grad_vec(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad(theta, &mut out);
        out
    }
}

/// Bisection for a root of `f` on `[lo, hi]` with a sign change.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    debug_assert!(flo * f(hi) <= 0.0, "bisection bracket must straddle a root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
        if hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Real roots of the depressed cubic `x^3 + p x + q`, ascending, via
/// bracketed bisection between the inflection points of the derivative.
fn cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let f = |x: f64| x * x * x + p * x + q;
    let bound = 2.5 + p.abs() + q.abs();
    if p >= 0.0 {
        return vec![bisect(&f, -bound, bound)];
    }
    let infl = (-p / 3.0).sqrt();
    let mut roots = Vec::new();
    for (lo, hi) in [(-bound, -infl), (-infl, infl), (infl, bound)] {
        if f(lo) * f(hi) <= 0.0 {
            let r = bisect(&f, lo, hi);
            if roots.last().map_or(true, |last: &f64| r - last > 1e-9) {
                roots.push(r);
            }
        }
    }
    roots
}

pub fn quadratic(dim: usize) -> Result<Landscape> {
    if dim == 0 {
        return Err(Error::InvalidParameter {
            name: "dim",
            message: "quadratic needs dim >= 1".into(),
        });
    }
    Ok(Landscape {
        id: CatalogId::Quadratic { dim },
        dim,
        profile: LojasiewiczProfile {
            low_constant: Some(2.0),
            low_level: None,
            high_constant: Some(2.0),
            high_level: None,
            high_is_global: true,
            tube_radius: None,
            grad_lipschitz: 1.0,
            grad_lipschitz_estimated: false,
            working_box: Region::cube(dim, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima: vec![Minimum { point: vec![0.0; dim], value: 0.0, label: "origin".into() }],
        toy: None,
        shift: 0.0,
    })
}

/// `f(x,y) = x^4/4 - x^2 + alpha*x + y^2 + c_alpha` with `inf f = 0`.
///
/// The shift `c_alpha` is computed by bisection on the section cubic to
/// 1e-12 and cached. For `alpha > 0` the two wells have unequal depth; the
/// global minimum sits at the negative abscissa.
pub fn double_well_2d(alpha: f64) -> Result<Landscape> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            message: format!("double wells require alpha in [0, 1], got {alpha}"),
        });
    }
    let h = |x: f64| x.powi(4) / 4.0 - x * x + alpha * x;
    // Section derivative: x^3 - 2x + alpha.
    let roots = cubic_roots(-2.0, alpha);
    debug_assert_eq!(roots.len(), 3, "alpha in [0,1] keeps both wells");
    let (x_minus, x_plus) = (roots[0], roots[2]);
    let c = -h(x_minus).min(h(x_plus));
    let box2 = Region::cube(2, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH);
    // Hessian is diag(3x^2 - 2, 2); spectral norm peaks at the box edge.
    let c_l = (3.0 * DEFAULT_BOX_HALF_WIDTH * DEFAULT_BOX_HALF_WIDTH - 2.0).max(2.0);
    let minima = vec![
        Minimum { point: vec![x_minus, 0.0], value: h(x_minus) + c, label: "x_minus".into() },
        Minimum { point: vec![x_plus, 0.0], value: h(x_plus) + c, label: "x_plus".into() },
    ];
    Ok(Landscape {
        id: CatalogId::DoubleWell2d { alpha },
        dim: 2,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            grad_lipschitz: c_l,
            grad_lipschitz_estimated: false,
            working_box: box2,
        },
        minima,
        toy: None,
        shift: c,
    })
}

/// `f(x) = (x^2-1)^2/4 + alpha*x - inf`, the bounded-noise escape example.
pub fn tilted_quartic_1d(alpha: f64) -> Result<Landscape> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            message: format!("double wells require alpha in [0, 1], got {alpha}"),
        });
    }
    let h = |x: f64| {
        let q = x * x - 1.0;
        q * q / 4.0 + alpha * x
    };
    // Section derivative: x^3 - x + alpha; two wells survive while
    // alpha < 2/(3*sqrt(3)).
    let roots = cubic_roots(-1.0, alpha);
    let minima_x: Vec<f64> = if roots.len() == 3 {
        vec![roots[0], roots[2]]
    } else {
        roots
    };
    let c = -minima_x.iter().map(|x| h(*x)).fold(f64::INFINITY, f64::min);
    let minima: Vec<Minimum> = minima_x
        .iter()
        .enumerate()
        .map(|(i, x)| Minimum {
            point: vec![*x],
            value: h(*x) + c,
            label: if minima_x.len() == 1 {
                "x_min".into()
            } else if i == 0 {
                "x_minus".into()
            } else {
                "x_plus".into()
            },
        })
        .collect();
    let c_l = 3.0 * DEFAULT_BOX_HALF_WIDTH * DEFAULT_BOX_HALF_WIDTH - 1.0;
    Ok(Landscape {
        id: CatalogId::TiltedQuartic1d { alpha },
        dim: 1,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            grad_lipschitz: c_l,
            grad_lipschitz_estimated: false,
            working_box: Region::cube(1, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima,
        toy: None,
        shift: c,
    })
}

/// `f(x,y) = sin(x) + sin(y) + 2`: a lattice of non-degenerate minima.
///
/// With `s = 1 + sin(x)`, `r = 1 + sin(y)` one has `|grad f|^2 =
/// s(2-s) + r(2-r)` and `f = s + r`, so on `{f < 1/2}` the ratio is at
/// least `3/2`: a certified local Lojasiewicz constant.
pub fn sin_lattice() -> Landscape {
    use std::f64::consts::PI;
    let mut minima = Vec::new();
    let coords = [-PI / 2.0, 3.0 * PI / 2.0];
    for x in coords {
        for y in coords {
            minima.push(Minimum {
                point: vec![x, y],
                value: 0.0,
                label: format!("min({x:.4},{y:.4})"),
            });
        }
    }
    Landscape {
        id: CatalogId::SinLattice,
        dim: 2,
        profile: LojasiewiczProfile {
            low_constant: Some(1.5),
            low_level: Some(0.5),
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            grad_lipschitz: 1.0,
            grad_lipschitz_estimated: false,
            working_box: Region::cube(2, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima,
        toy: None,
        shift: 0.0,
    }
}

/// `f(x) = x^2 + 2*eps*sin^2(x/eps)`: an oscillatory perturbation of a
/// quadratic with a single global minimum at the origin.
pub fn perturbed_quadratic(eps: f64) -> Result<Landscape> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            message: format!("perturbed_quadratic requires eps > 0, got {eps}"),
        });
    }
    Ok(Landscape {
        id: CatalogId::PerturbedQuadratic { eps },
        dim: 1,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            // f'' = 2 + 4cos(2x/eps)/eps, globally bounded.
            grad_lipschitz: 2.0 + 4.0 / eps,
            grad_lipschitz_estimated: false,
            working_box: Region::cube(1, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima: vec![Minimum { point: vec![0.0], value: 0.0, label: "origin".into() }],
        toy: None,
        shift: 0.0,
    })
}

/// The two 1-D functions with low-energy points arbitrarily far from the
/// minimizer; they fail the tube condition needed for global convergence.
fn nonexample(which: u8) -> Landscape {
    let id = if which == 1 { CatalogId::Nonexample1 } else { CatalogId::Nonexample2 };
    let region = Region::cube(1, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH);
    // No closed-form Hessian supremum worth maintaining here; take a dense
    // grid of second differences of the exact gradient, with safety factor.
    let mut shell = Landscape {
        id,
        dim: 1,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            grad_lipschitz: 1.0,
            grad_lipschitz_estimated: true,
            working_box: region.clone(),
        },
        minima: vec![Minimum { point: vec![0.0], value: 0.0, label: "origin".into() }],
        toy: None,
        shift: 0.0,
    };
    let n = 200_001;
    let (lo, hi) = (region.lo[0], region.hi[0]);
    let step = (hi - lo) / (n - 1) as f64;
    let mut sup = 0.0f64;
    let mut g_prev = shell.grad_vec(&[lo])[0];
    for i in 1..n {
        let x = lo + step * i as f64;
        let g = shell.grad_vec(&[x])[0];
        sup = sup.max(((g - g_prev) / step).abs());
        g_prev = g;
    }
    shell.profile.grad_lipschitz = 1.1 * sup;
    shell
}

/// Overparametrized two-layer tanh regression toy; see [`RegressionToy`].
pub fn regression_toy(n: usize, m: usize, seed: u64) -> Result<Landscape> {
    let toy = RegressionToy::new(n, m, seed)?;
    let c_l = toy.grad_lipschitz_estimate();
    Ok(Landscape {
        id: CatalogId::RegressionToy { n, m, seed },
        dim: m,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            grad_lipschitz: c_l,
            grad_lipschitz_estimated: true,
            working_box: Region::cube(m, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima: Vec::new(),
        toy: Some(toy),
        shift: 0.0,
    })
}

/// Softmax cross-entropy of the first class as a function of the logits.
/// Its infimum 0 is approached but never attained; no Lojasiewicz
/// constant is certified anywhere near the infimum.
pub fn cross_entropy_toy(k: usize) -> Result<Landscape> {
    if k < 2 {
        return Err(Error::InvalidParameter {
            name: "k",
            message: format!("cross entropy needs k >= 2 classes, got {k}"),
        });
    }
    Ok(Landscape {
        id: CatalogId::CrossEntropyToy { k },
        dim: k,
        profile: LojasiewiczProfile {
            low_constant: None,
            low_level: None,
            high_constant: None,
            high_level: None,
            high_is_global: false,
            tube_radius: None,
            // The softmax Hessian diag(p) - p p^T has spectral norm <= 1/2:
            // for unit v, v^T H v = Var_p(v) <= (max v - min v)^2/4 <= |v|^2/2.
            grad_lipschitz: 0.5,
            grad_lipschitz_estimated: false,
            working_box: Region::cube(k, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        },
        minima: Vec::new(),
        toy: None,
        shift: 0.0,
    })
}

/// Softmax cross-entropy loss and its exact gradient.
///
/// `label` is the 1-based class index. The log-sum-exp is evaluated with
/// max subtraction and `ln_1p` so the saturated regime keeps full relative
/// accuracy.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::InvalidParameter {
            name: "logits",
            message: format!("need k >= 2 logits, got {k}"),
        });
    }
    if label == 0 || label > k {
        return Err(Error::InvalidParameter {
            name: "label",
            message: format!("label must lie in 1..={k}, got {label}"),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let mut arg_max = 0;
    for j in 1..k {
        if logits[j] > logits[arg_max] {
            arg_max = j;
        }
    }
    let h_max = logits[arg_max];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != arg_max)
        .map(|(_, h)| (h - h_max).exp())
        .sum();
    let log_sum = rest.ln_1p();
    // Grouped so the saturated case (label = argmax) never cancels the
    // tiny log term against the large max.
    let loss = (h_max - logits[label - 1]) + log_sum;
    let mut grad: Vec<f64> = logits.iter().map(|h| ((h - h_max) - log_sum).exp()).collect();
    grad[label - 1] -= 1.0;
    Ok((loss, grad))
}

/// Report of the `|theta| |grad L| >= L - C` lower bound for last-layer
/// linear regression models.
#[derive(Debug, Clone)]
pub struct RiskBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub pass: bool,
}

/// Check that the risk has no critical points at high values: for models
/// with a final linear layer, `|theta| * |grad L(theta)| >= L(theta) - C`
/// where `C` is the mean square of the targets (the empirical measure has
/// distinct inputs, so the conditional-mean term of the constant vanishes
/// and the Cauchy-Schwarz cross term folds into the target norm).
pub fn risk_lower_bound_check(landscape: &Landscape, theta: &[f64]) -> Result<RiskBoundReport> {
    let toy = landscape.per_sample().ok_or(Error::NoLinearLayer)?;
    let c = toy.mean_square_targets();
    let loss = toy.loss(theta);
    let grad = landscape.grad_vec(theta);
    let lhs = linalg::norm(theta) * linalg::norm(&grad);
    let rhs = loss - c;
    Ok(RiskBoundReport { lhs, rhs, constant: c, pass: lhs >= rhs - 1e-12 })
}
