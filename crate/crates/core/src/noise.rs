//! Gradient-estimator families.
//!
//! Every model yields unbiased estimates of the exact gradient. The `ml_*`
//! kinds scale the perturbation by `sqrt(sigma * f(theta))` so the noise
//! dies at the minimizers; `random_selection` averages per-sample gradients
//! of the regression toy, the estimator machine learning actually uses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::landscapes::Landscape;
use crate::linalg;

/// Gradient-estimator family with its noise law.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// No perturbation: plain gradient descent.
    Exact,
    /// State-independent Gaussian noise with total second moment `sigma^2`
    /// (per coordinate `sigma/sqrt(m)`).
    Homogeneous { sigma: f64 },
    /// Gaussian noise with second moment exactly `sigma * f(theta)`,
    /// scaled per coordinate by `sqrt(sigma f / m)`. This saturates the
    /// variance ceiling assumed by the rate bounds, the sharpest test of
    /// them.
    MlGaussian { sigma: f64 },
    /// Value-scaled bounded noise `sqrt(sigma f) * xi * u` with `xi = +-1`
    /// equiprobable and `u` the first coordinate direction (the scalar
    /// `+-1` in one dimension).
    MlRademacher { sigma: f64 },
    /// Mean of `batch` per-sample gradients drawn uniformly without
    /// replacement from the toy's samples.
    RandomSelection { batch: usize },
}

impl NoiseModel {
    /// Noise intensity `sigma`; zero for the kinds that do not use one.
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::Exact | NoiseModel::RandomSelection { .. } => 0.0,
            NoiseModel::Homogeneous { sigma }
            | NoiseModel::MlGaussian { sigma }
            | NoiseModel::MlRademacher { sigma } => *sigma,
        }
    }

    /// Descriptor of the direction law `Y`.
    pub fn direction_law(&self) -> &'static str {
        match self {
            NoiseModel::Exact => "none",
            NoiseModel::Homogeneous { .. } | NoiseModel::MlGaussian { .. } => {
                "standard normal vector / sqrt(m)"
            }
            NoiseModel::MlRademacher { .. } => "+-1 uniform scalar times fixed unit direction",
            NoiseModel::RandomSelection { .. } => "uniform sample selection",
        }
    }

    pub fn config_kind(&self) -> &'static str {
        match self {
            NoiseModel::Exact => "exact",
            NoiseModel::Homogeneous { .. } => "homogeneous",
            NoiseModel::MlGaussian { .. } => "ml_gaussian",
            NoiseModel::MlRademacher { .. } => "ml_rademacher",
            NoiseModel::RandomSelection { .. } => "random_selection",
        }
    }

    /// One gradient estimate at `theta`.
    pub fn draw<R: Rng>(
        &self,
        landscape: &Landscape,
        theta: &[f64],
        rng: &mut R,
    ) -> Result<GradientSample> {
        let f = landscape.eval(theta);
        self.draw_with_f(landscape, theta, f, rng)
    }

    /// One gradient estimate when `f(theta)` is already known (the engine
    /// evaluates it anyway); avoids the second objective evaluation.
    pub fn draw_with_f<R: Rng>(
        &self,
        landscape: &Landscape,
        theta: &[f64],
        f: f64,
        rng: &mut R,
    ) -> Result<GradientSample> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParamVector("non-finite entry".into()));
        }
        let m = landscape.dim();
        match self {
            NoiseModel::Exact => {
                let g = landscape.grad_vec(theta);
                Ok(GradientSample { g, noise_part: vec![0.0; m], f_at_draw: f })
            }
            NoiseModel::Homogeneous { sigma } => {
                let grad = landscape.grad_vec(theta);
                let scale = sigma / (m as f64).sqrt();
                Self::additive(grad, f, m, scale, rng)
            }
            NoiseModel::MlGaussian { sigma } => {
                let grad = landscape.grad_vec(theta);
                let scale = (sigma * f.max(0.0) / m as f64).sqrt();
                Self::additive(grad, f, m, scale, rng)
            }
            NoiseModel::MlRademacher { sigma } => {
                let grad = landscape.grad_vec(theta);
                let magnitude = (sigma * f.max(0.0)).sqrt();
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut noise = vec![0.0; m];
                noise[0] = sign * magnitude;
                let g = grad.iter().zip(&noise).map(|(a, b)| a + b).collect();
                Ok(GradientSample { g, noise_part: noise, f_at_draw: f })
            }
            NoiseModel::RandomSelection { batch } => {
                let toy = landscape.per_sample().ok_or(Error::NoPerSampleStructure)?;
                let n = toy.samples();
                let b = *batch;
                if b == 0 || b > n {
                    return Err(Error::BatchTooLarge { batch: b, samples: n });
                }
                // Partial Fisher-Yates: the first b entries are a uniform
                // sample without replacement.
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..b {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                let mut g = vec![0.0; m];
                let mut gi = vec![0.0; m];
                for &i in &idx[..b] {
                    toy.sample_grad(i, theta, &mut gi);
                    for (acc, v) in g.iter_mut().zip(&gi) {
                        *acc += *v;
                    }
                }
                for v in g.iter_mut() {
                    *v /= b as f64;
                }
                let mean = landscape.grad_vec(theta);
                let noise_part = g.iter().zip(&mean).map(|(a, b)| a - b).collect();
                Ok(GradientSample { g, noise_part, f_at_draw: f })
            }
        }
    }

    fn additive<R: Rng>(
        grad: Vec<f64>,
        f: f64,
        m: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let normal = StandardNormal;
        let noise: Vec<f64> =
            (0..m).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&normal, rng)).collect();
        let g = grad.iter().zip(&noise).map(|(a, b)| a + b).collect();
        Ok(GradientSample { g, noise_part: noise, f_at_draw: f })
    }
}

/// One estimator draw with its recorded decomposition.
#[derive(Debug, Clone)]
pub struct GradientSample {
    /// The estimate `g = grad f(theta) + noise_part`, exactly.
    pub g: Vec<f64>,
    pub noise_part: Vec<f64>,
    pub f_at_draw: f64,
}

/// Estimator covariance at `theta` as a dense row-major `m x m` matrix.
///
/// For `random_selection` the exact finite-sum covariance is returned
/// (`n_draws` is ignored): the batch-1 matrix
/// `(1/n) sum_i (grad L_i - grad L) (x) (grad L_i - grad L)` scaled by the
/// without-replacement factor `(n-b) / (b (n-1))`. The other kinds are
/// sampled with the known mean `grad f`.
pub fn covariance<R: Rng>(
    model: &NoiseModel,
    landscape: &Landscape,
    theta: &[f64],
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = landscape.dim();
    if let NoiseModel::RandomSelection { batch } = model {
        let toy = landscape.per_sample().ok_or(Error::NoPerSampleStructure)?;
        let n = toy.samples();
        let b = *batch;
        if b == 0 || b > n {
            return Err(Error::BatchTooLarge { batch: b, samples: n });
        }
        let mean = landscape.grad_vec(theta);
        let mut sigma = vec![0.0; m * m];
        let mut gi = vec![0.0; m];
        for i in 0..n {
            toy.sample_grad(i, theta, &mut gi);
            let d: Vec<f64> = gi.iter().zip(&mean).map(|(a, b)| a - b).collect();
            for r in 0..m {
                for c in 0..m {
                    sigma[r * m + c] += d[r] * d[c];
                }
            }
        }
        let correction = if n == 1 { 0.0 } else { (n - b) as f64 / (b as f64 * (n - 1) as f64) };
        let scale = correction / n as f64;
        sigma.iter_mut().for_each(|v| *v *= scale);
        return Ok(sigma);
    }
    if n_draws < 2 {
        return Err(Error::InvalidParameter {
            name: "n_draws",
            message: "sampled covariance needs n_draws >= 2".into(),
        });
    }
    let mean = landscape.grad_vec(theta);
    let f = landscape.eval(theta);
    let mut sigma = vec![0.0; m * m];
    for _ in 0..n_draws {
        let sample = model.draw_with_f(landscape, theta, f, rng)?;
        let d: Vec<f64> = sample.g.iter().zip(&mean).map(|(a, b)| a - b).collect();
        for r in 0..m {
            for c in r..m {
                sigma[r * m + c] += d[r] * d[c];
            }
        }
    }
    let scale = 1.0 / n_draws as f64;
    for r in 0..m {
        for c in r..m {
            sigma[r * m + c] *= scale;
            sigma[c * m + r] = sigma[r * m + c];
        }
    }
    Ok(sigma)
}

/// Numerical rank of a symmetric matrix: eigenvalues above `tol` times the
/// largest magnitude.
pub fn covariance_rank(sigma: &[f64], m: usize, tol: f64) -> Result<usize> {
    let eig = linalg::symmetric_eigenvalues(sigma, m)?;
    Ok(linalg::rank_from_eigenvalues(&eig, tol))
}

/// Report of the second-moment ceiling for the random-selection estimator.
#[derive(Debug, Clone)]
pub struct VarianceBoundReport {
    /// Exact `E|g|^2 = (1/n) sum_i |grad L_i|^2` (single-sample selection).
    pub empirical: f64,
    /// `sup |grad_theta h|^2 * L(theta)` with the sup taken over the
    /// working box and the data points.
    pub bound: f64,
    pub pass: bool,
}

/// Check `E|g|^2 <= sup|grad_theta h|^2 * L(theta)` for the toy.
pub fn variance_bound_check(landscape: &Landscape, theta: &[f64]) -> Result<VarianceBoundReport> {
    let toy = landscape.per_sample().ok_or(Error::NoPerSampleStructure)?;
    let n = toy.samples();
    let m = landscape.dim();
    let mut gi = vec![0.0; m];
    let mut second_moment = 0.0;
    for i in 0..n {
        toy.sample_grad(i, theta, &mut gi);
        second_moment += linalg::dot(&gi, &gi);
    }
    second_moment /= n as f64;
    let bound = toy.sup_model_grad_sq() * toy.loss(theta);
    Ok(VarianceBoundReport {
        empirical: second_moment,
        bound,
        pass: second_moment <= bound * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::{self, RegressionToy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_sigma_reduces_to_exact_gradient() {
        let l = landscapes::double_well_2d(0.25).unwrap();
        let theta = [1.3, -0.4];
        let grad = l.grad_vec(&theta);
        for model in [
            NoiseModel::MlGaussian { sigma: 0.0 },
            NoiseModel::MlRademacher { sigma: 0.0 },
            NoiseModel::Homogeneous { sigma: 0.0 },
        ] {
            let s = model.draw(&l, &theta, &mut rng(1)).unwrap();
            assert_eq!(s.g, grad);
            assert!(s.noise_part.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rejects_non_finite_theta() {
        let l = landscapes::quadratic(2).unwrap();
        let err = NoiseModel::Exact.draw_with_f(&l, &[f64::INFINITY, 0.0], 1.0, &mut rng(0));
        assert!(matches!(err, Err(Error::BadParamVector(_))));
    }

    #[test]
    fn ml_gaussian_saturates_variance_ceiling() {
        // quadratic(1) at theta = 1: f = 1/2, sigma = 4 => E|noise|^2 = 2.
        let l = landscapes::quadratic(1).unwrap();
        let model = NoiseModel::MlGaussian { sigma: 4.0 };
        let mut r = rng(99);
        let draws = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = model.draw_with_f(&l, &[1.0], 0.5, &mut r).unwrap();
            acc += linalg::dot(&s.noise_part, &s.noise_part);
        }
        let mean = acc / draws as f64;
        // Var(2 Z^2) = 8, so the standard error is sqrt(8)/1000.
        assert!((mean - 2.0).abs() < 5.0 * (8.0f64).sqrt() / 1000.0, "mean = {mean}");
    }

    #[test]
    fn rademacher_magnitude_is_exact() {
        let l = landscapes::double_well_2d(0.1).unwrap();
        let model = NoiseModel::MlRademacher { sigma: 0.7 };
        let mut r = rng(5);
        let theta = [0.4, 0.9];
        let f = l.eval(&theta);
        let want = (0.7 * f).sqrt();
        let mut saw_plus = false;
        let mut saw_minus = false;
        for _ in 0..64 {
            let s = model.draw_with_f(&l, &theta, f, &mut r).unwrap();
            assert_eq!(linalg::norm(&s.noise_part), want);
            assert_eq!(s.noise_part[1], 0.0, "noise lives on the fixed unit direction");
            saw_plus |= s.noise_part[0] > 0.0;
            saw_minus |= s.noise_part[0] < 0.0;
        }
        assert!(saw_plus && saw_minus);
    }

    #[test]
    fn unbiasedness_within_monte_carlo_error() {
        let l = landscapes::double_well_2d(0.25).unwrap();
        let toy_l = landscapes::regression_toy(3, 9, 11).unwrap();
        let cases: Vec<(&Landscape, NoiseModel, Vec<f64>)> = vec![
            (&l, NoiseModel::Homogeneous { sigma: 2.0 }, vec![0.7, -1.1]),
            (&l, NoiseModel::MlGaussian { sigma: 3.0 }, vec![1.4, 0.2]),
            (&l, NoiseModel::MlRademacher { sigma: 1.0 }, vec![-0.3, 0.5]),
            (&toy_l, NoiseModel::RandomSelection { batch: 1 }, vec![0.1; 9]),
        ];
        let draws = 100_000;
        for (lan, model, theta) in cases {
            let mean_true = lan.grad_vec(&theta);
            let m = lan.dim();
            let mut acc = vec![0.0; m];
            let mut acc2 = vec![0.0; m];
            let mut r = rng(2718);
            for _ in 0..draws {
                let s = model.draw(lan, &theta, &mut r).unwrap();
                for j in 0..m {
                    acc[j] += s.g[j];
                    acc2[j] += s.g[j] * s.g[j];
                }
            }
            for j in 0..m {
                let mean = acc[j] / draws as f64;
                let var = (acc2[j] / draws as f64 - mean * mean).max(0.0);
                let se = (var / draws as f64).sqrt();
                assert!(
                    (mean - mean_true[j]).abs() <= 5.0 * se + 1e-12,
                    "{} coord {j}: {mean} vs {}",
                    model.config_kind(),
                    mean_true[j]
                );
            }
        }
    }

    #[test]
    fn homogeneous_covariance_is_isotropic() {
        let l = landscapes::quadratic(5).unwrap();
        let model = NoiseModel::Homogeneous { sigma: 1.5 };
        let theta = vec![0.3; 5];
        let sigma = covariance(&model, &l, &theta, 200_000, &mut rng(7)).unwrap();
        let want = 1.5 * 1.5 / 5.0;
        for r in 0..5 {
            for c in 0..5 {
                let v = sigma[r * 5 + c];
                if r == c {
                    assert!((v - want).abs() < 0.02 * want, "diag {v} vs {want}");
                } else {
                    assert!(v.abs() < 0.02 * want);
                }
            }
        }
        assert_eq!(covariance_rank(&sigma, 5, 1e-8).unwrap(), 5);
    }

    #[test]
    fn random_selection_covariance_rank_bounded_by_samples() {
        let l = landscapes::regression_toy(3, 12, 5).unwrap();
        let model = NoiseModel::RandomSelection { batch: 1 };
        let mut r = rng(17);
        for _ in 0..10 {
            let theta = l.working_box().sample(&mut r);
            let sigma = covariance(&model, &l, &theta, 0, &mut r).unwrap();
            assert!(covariance_rank(&sigma, 12, 1e-8).unwrap() <= 3);
        }
    }

    #[test]
    fn random_selection_closed_form_matches_empirical() {
        let l = landscapes::regression_toy(3, 9, 23).unwrap();
        let theta: Vec<f64> = (0..9).map(|i| 0.3 * (i as f64 * 0.711).sin()).collect();
        for batch in [1usize, 2] {
            let model = NoiseModel::RandomSelection { batch };
            let exact = covariance(&model, &l, &theta, 0, &mut rng(0)).unwrap();
            let mean = l.grad_vec(&theta);
            let draws = 200_000;
            let mut emp = vec![0.0; 81];
            let mut r = rng(31 + batch as u64);
            for _ in 0..draws {
                let s = model.draw(&l, &theta, &mut r).unwrap();
                let d: Vec<f64> = s.g.iter().zip(&mean).map(|(a, b)| a - b).collect();
                for i in 0..9 {
                    for j in 0..9 {
                        emp[i * 9 + j] += d[i] * d[j];
                    }
                }
            }
            emp.iter_mut().for_each(|v| *v /= draws as f64);
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (e, x) in emp.iter().zip(&exact) {
                assert!((e - x).abs() < 0.02 * scale, "batch {batch}: {e} vs {x}");
            }
        }
    }

    #[test]
    fn covariance_vanishes_at_interpolant() {
        // Targets generated by the model: exact zero loss, exact zero noise.
        let probe = RegressionToy::with_data(vec![0.4, -0.9, 1.7], vec![0.0; 3], 4).unwrap();
        let theta: Vec<f64> = (0..12).map(|i| 0.25 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let targets: Vec<f64> = probe.inputs().iter().map(|x| probe.model(&theta, *x)).collect();
        let toy = RegressionToy::with_data(probe.inputs().to_vec(), targets, 4).unwrap();
        let mut l = landscapes::regression_toy(3, 12, 1).unwrap();
        set_toy(&mut l, toy);
        assert_eq!(l.eval(&theta), 0.0);
        let model = NoiseModel::RandomSelection { batch: 1 };
        let s = model.draw(&l, &theta, &mut rng(2)).unwrap();
        assert!(s.g.iter().all(|v| *v == 0.0), "g = 0 at the minimizer");
        assert!(s.noise_part.iter().all(|v| *v == 0.0));
        let sigma = covariance(&model, &l, &theta, 0, &mut rng(3)).unwrap();
        assert!(sigma.iter().all(|v| *v == 0.0), "Sigma = 0 on the zero-loss set");
        // ML kinds also lose their noise where f = 0.
        let ml = NoiseModel::MlGaussian { sigma: 8.0 };
        let s = ml.draw(&l, &theta, &mut rng(4)).unwrap();
        assert!(s.noise_part.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_larger_than_sample_count_is_rejected() {
        let l = landscapes::regression_toy(3, 12, 0).unwrap();
        let model = NoiseModel::RandomSelection { batch: 4 };
        assert!(matches!(
            model.draw(&l, &vec![0.0; 12], &mut rng(0)),
            Err(Error::BatchTooLarge { batch: 4, samples: 3 })
        ));
    }

    #[test]
    fn covariance_rank_examples() {
        assert_eq!(covariance_rank(&vec![0.0; 16], 4, 1e-8).unwrap(), 0);
        // Outer product of a random unit vector has rank one.
        let v = [0.6, -0.64, 0.48];
        let mut m = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 3 + j] = v[i] * v[j];
            }
        }
        assert_eq!(covariance_rank(&m, 3, 1e-8).unwrap(), 1);
        let asym = [0.0, 1.0, 0.0, 0.0];
        assert!(matches!(covariance_rank(&asym, 2, 1e-8), Err(Error::AsymmetricMatrix { .. })));
    }

    #[test]
    fn variance_bound_holds_on_box() {
        let l = landscapes::regression_toy(4, 12, 77).unwrap();
        let mut r = rng(13);
        for _ in 0..100 {
            let theta = l.working_box().sample(&mut r);
            let report = variance_bound_check(&l, &theta).unwrap();
            assert!(report.pass, "{} > {}", report.empirical, report.bound);
        }
    }

    #[test]
    fn variance_bound_single_sample_equals_full_gradient() {
        let probe = RegressionToy::with_data(vec![0.8], vec![0.3], 1).unwrap();
        let mut l = landscapes::regression_toy(1, 3, 0)
            .unwrap_or_else(|_| panic!("1 < 3 is overparametrized"));
        set_toy(&mut l, probe);
        let theta = [0.5, -0.2, 0.9];
        let report = variance_bound_check(&l, &theta).unwrap();
        let g = l.grad_vec(&theta);
        assert!((report.empirical - linalg::dot(&g, &g)).abs() < 1e-15);
        assert!(report.pass);
    }

    // Swap the toy behind a regression landscape (test helper).
    fn set_toy(l: &mut Landscape, toy: RegressionToy) {
        *l = landscapes::test_support::with_toy(l.clone(), toy);
    }
}
