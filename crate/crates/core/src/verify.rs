//! Independent numerical oracles: finite differences, constant estimation,
//! symmetric eigenvalue routines and the rank-perturbation eigenvalue test.
//!
//! Everything here deliberately avoids the code paths it is meant to check.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::landscapes::{Landscape, Region};
use crate::linalg;

/// How a constant estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    Grid,
    PairSampling,
    PowerIteration,
}

/// A sampled constant with its provenance.
#[derive(Debug, Clone)]
pub struct ConstantEstimate {
    pub value: f64,
    pub method: EstimateMethod,
    pub n_samples: usize,
    pub region: Region,
    /// Whether a safety factor was applied.
    pub conservative: bool,
}

/// Central finite-difference gradient with per-coordinate step
/// `h * max(1, |theta_i|)`; error O(h^2) on smooth objectives.
pub fn fd_gradient(landscape: &Landscape, theta: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut out = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        let step = h * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let plus = landscape.eval(&probe);
        probe[i] = theta[i] - step;
        let minus = landscape.eval(&probe);
        probe[i] = theta[i];
        out[i] = (plus - minus) / (2.0 * step);
    }
    out
}

/// Empirical Lojasiewicz constant: the infimum of `|grad f|^2 / f` over
/// uniform samples of the region, skipping points with `f < floor` (the
/// 0/0 regime) and, when `ceiling` is given, points with `f >= ceiling`
/// (restriction to a sublevel set).
pub fn estimate_lojasiewicz(
    landscape: &Landscape,
    region: &Region,
    n: usize,
    floor: f64,
    ceiling: Option<f64>,
    seed: u64,
) -> Result<ConstantEstimate> {
    assert!(n >= 1000, "estimate needs at least 10^3 samples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inf = f64::INFINITY;
    let mut kept = 0usize;
    let mut grad = vec![0.0; landscape.dim()];
    for _ in 0..n {
        let theta = region.sample(&mut rng);
        let f = landscape.eval(&theta);
        if f < floor || ceiling.map_or(false, |c| f >= c) {
            continue;
        }
        landscape.grad(&theta, &mut grad);
        let ratio = linalg::dot(&grad, &grad) / f;
        if ratio < inf {
            inf = ratio;
        }
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::AllSamplesExcluded);
    }
    Ok(ConstantEstimate {
        value: inf,
        method: EstimateMethod::Grid,
        n_samples: kept,
        region: region.clone(),
        conservative: false,
    })
}

/// Empirical one-sided Lipschitz constant of the gradient: the supremum of
/// `<grad f(a) - grad f(b), a - b> / |a - b|^2` over sampled pairs, times a
/// 1.1 safety factor. Pairs mix random directions with axis directions and
/// include separations down to 1e-4; base points cover the box corners.
pub fn estimate_lipschitz(
    landscape: &Landscape,
    region: &Region,
    n_pairs: usize,
    seed: u64,
) -> ConstantEstimate {
    assert!(n_pairs >= 1000, "estimate needs at least 10^3 pairs");
    let dim = landscape.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let diam: f64 = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(lo, hi)| (hi - lo) * (hi - lo))
        .sum::<f64>()
        .sqrt();
    let mut ga = vec![0.0; dim];
    let mut gb = vec![0.0; dim];
    let mut sup = 0.0f64;
    let mut quotient = |a: &[f64], b: &[f64], ga: &mut Vec<f64>, gb: &mut Vec<f64>| -> f64 {
        landscape.grad(a, &mut ga[..]);
        landscape.grad(b, &mut gb[..]);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            num += (ga[i] - gb[i]) * d;
            den += d * d;
        }
        num / den
    };
    // Deterministic pass: box corners probed inward along each axis at the
    // smallest separation, where the curvature usually peaks.
    if dim <= 16 {
        for corner in 0..(1usize << dim) {
            let a: Vec<f64> = (0..dim)
                .map(|i| if corner >> i & 1 == 1 { region.hi[i] } else { region.lo[i] })
                .collect();
            for axis in 0..dim {
                let mut b = a.clone();
                b[axis] += if corner >> axis & 1 == 1 { -1e-4 } else { 1e-4 };
                sup = sup.max(quotient(&a, &b, &mut ga, &mut gb));
            }
        }
    }
    for k in 0..n_pairs {
        let a = region.sample(&mut rng);
        let sep = 1e-4 * (0.1 * diam / 1e-4f64).powf(rng.gen_range(0.0..=1.0));
        let mut dir: Vec<f64> = if k % 2 == 0 {
            (0..dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng)).collect()
        } else {
            let mut d = vec![0.0; dim];
            d[rng.gen_range(0..dim)] = 1.0;
            d
        };
        let nd = linalg::norm(&dir);
        dir.iter_mut().for_each(|v| *v *= sep / nd);
        // Clamp the partner into the region: the constant is certified on
        // the box only.
        let b: Vec<f64> = a
            .iter()
            .zip(&dir)
            .enumerate()
            .map(|(i, (x, d))| (x + d).clamp(region.lo[i], region.hi[i]))
            .collect();
        if a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() < 1e-24 {
            continue;
        }
        sup = sup.max(quotient(&a, &b, &mut ga, &mut gb));
    }
    ConstantEstimate {
        value: 1.1 * sup,
        method: EstimateMethod::PairSampling,
        n_samples: n_pairs,
        region: region.clone(),
        conservative: true,
    }
}

/// Supremum of the Hessian spectral norm over the region, estimated by
/// power iteration on the finite-difference Hessian-vector map at sampled
/// points (dense grid in one dimension), times a 1.1 safety factor.
pub fn hessian_norm_sup(
    landscape: &Landscape,
    region: &Region,
    n_points: usize,
    seed: u64,
) -> ConstantEstimate {
    let dim = landscape.dim();
    let h = 1e-5;
    let mut sup = 0.0f64;
    if dim == 1 {
        let n = n_points.max(20_001);
        let (lo, hi) = (region.lo[0], region.hi[0]);
        let step = (hi - lo) / (n - 1) as f64;
        let mut g_prev = landscape.grad_vec(&[lo])[0];
        for i in 1..n {
            let x = lo + step * i as f64;
            let g = landscape.grad_vec(&[x])[0];
            sup = sup.max(((g - g_prev) / step).abs());
            g_prev = g;
        }
        return ConstantEstimate {
            value: 1.1 * sup,
            method: EstimateMethod::Grid,
            n_samples: n,
            region: region.clone(),
            conservative: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut gp = vec![0.0; dim];
    let mut gm = vec![0.0; dim];
    for _ in 0..n_points {
        let theta = region.sample(&mut rng);
        let mut v: Vec<f64> =
            (0..dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng)).collect();
        let nv = linalg::norm(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        let mut lam = 0.0;
        for _ in 0..8 {
            let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
            let tm: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
            landscape.grad(&tp, &mut gp);
            landscape.grad(&tm, &mut gm);
            let hv: Vec<f64> = gp.iter().zip(&gm).map(|(p, q)| (p - q) / (2.0 * h)).collect();
            lam = linalg::norm(&hv);
            if lam < 1e-12 {
                break;
            }
            v = hv.iter().map(|z| z / lam).collect();
        }
        sup = sup.max(lam);
    }
    ConstantEstimate {
        value: 1.1 * sup,
        method: EstimateMethod::PowerIteration,
        n_samples: n_points,
        region: region.clone(),
        conservative: true,
    }
}

/// Report of the `|grad f|^2 <= 2 C_L f` sweep.
#[derive(Debug, Clone)]
pub struct GradientBoundReport {
    pub worst_ratio: f64,
    pub violations: usize,
    pub samples: usize,
    pub pass: bool,
}

/// Assert the gradient bound of nonnegative Lipschitz-gradient functions
/// at `n` uniform samples; reports the worst ratio `|grad f|^2 / (2 C_L f)`.
pub fn gradient_bound_check(
    landscape: &Landscape,
    region: &Region,
    n: usize,
    c_lipschitz: f64,
    seed: u64,
) -> GradientBoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; landscape.dim()];
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    for _ in 0..n {
        let theta = region.sample(&mut rng);
        let f = landscape.eval(&theta);
        landscape.grad(&theta, &mut grad);
        let g2 = linalg::dot(&grad, &grad);
        let cap = 2.0 * c_lipschitz * f;
        if g2 > cap * (1.0 + 1e-12) + 1e-30 {
            violations += 1;
        }
        if cap > 0.0 {
            worst = worst.max(g2 / cap);
        }
    }
    GradientBoundReport { worst_ratio: worst, violations, samples: n, pass: violations == 0 }
}

/// Smallest eigenvalue of a symmetric matrix (dense Jacobi, in-crate).
pub fn min_eigen_symmetric(matrix: &[f64], n: usize) -> Result<f64> {
    linalg::min_eigenvalue(matrix, n)
}

/// Eigenvalue test of the rank-perturbation lemma: for `A` symmetric PSD
/// with rank at most `rank_bound` and `B` symmetric with rank at least
/// `rank_bound + 1`, at least one of `A + sB`, `A - sB` has a negative
/// eigenvalue for every `s > 0`. Preconditions are verified numerically at
/// `tol`; violations make the instance vacuous, not failed.
pub fn lemma_rank_test(
    a: &[f64],
    b: &[f64],
    n: usize,
    rank_bound: usize,
    s: f64,
    tol: f64,
) -> Result<bool> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            message: format!("perturbation scale must be positive, got {s}"),
        });
    }
    let eig_a = linalg::symmetric_eigenvalues(a, n)?;
    let eig_b = linalg::symmetric_eigenvalues(b, n)?;
    let scale_a = eig_a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig_a[0] < -tol * scale_a.max(1.0) {
        return Err(Error::VacuousLemmaInstance("A is not positive semi-definite".into()));
    }
    if linalg::rank_from_eigenvalues(&eig_a, tol) > rank_bound {
        return Err(Error::VacuousLemmaInstance(format!(
            "rank(A) exceeds the bound {rank_bound}"
        )));
    }
    if linalg::rank_from_eigenvalues(&eig_b, tol) < rank_bound + 1 {
        return Err(Error::VacuousLemmaInstance(format!(
            "rank(B) below the required {}",
            rank_bound + 1
        )));
    }
    let plus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + s * y).collect();
    let minus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - s * y).collect();
    let lo_plus = linalg::min_eigenvalue(&plus, n)?;
    let lo_minus = linalg::min_eigenvalue(&minus, n)?;
    Ok(lo_plus.min(lo_minus) < -1e-12)
}

/// Interior maximum of the one-dimensional section `x -> f(x, 0, ...)` on
/// `(lo, hi)`: coarse grid bracket, then bisection on the section
/// derivative. The ridge oracle of the noise-matching rule.
pub fn section_interior_max(landscape: &Landscape, lo: f64, hi: f64) -> f64 {
    let dim = landscape.dim();
    let section = |x: f64| -> f64 {
        let mut theta = vec![0.0; dim];
        theta[0] = x;
        landscape.eval(&theta)
    };
    let dsection = |x: f64| -> f64 {
        let mut theta = vec![0.0; dim];
        theta[0] = x;
        landscape.grad_vec(&theta)[0]
    };
    let n = 20_001;
    let step = (hi - lo) / (n - 1) as f64;
    let mut best_i = 1;
    let mut best = f64::NEG_INFINITY;
    for i in 1..n - 1 {
        let v = section(lo + step * i as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut a = lo + step * (best_i - 1) as f64;
    let mut b = lo + step * (best_i + 1) as f64;
    // Derivative changes sign from + to - across an interior maximum.
    let mut da = dsection(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let dm = dsection(mid);
        if dm == 0.0 {
            return mid;
        }
        if (da > 0.0) == (dm > 0.0) {
            a = mid;
            da = dm;
        } else {
            b = mid;
        }
        if b - a < 1e-14 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}
