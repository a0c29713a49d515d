//! Overparametrized regression toy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Internal seed for the model-gradient supremum sweep.
const SUP_SWEEP_SEED: u64 = 0xD15E;
const SUP_SWEEP_POINTS: usize = 2000;

/// Two-layer tanh network `h(theta, x) = sum_j a_j tanh(w_j x + b_j)`
/// fitted to `n` scalar samples by mean-squared loss
/// `L = (1/2n) sum_i (h(theta, x_i) - y_i)^2`.
///
/// The parameter layout is `theta = [a_1.. | w_1.. | b_1..]` with
/// `m = 3 * width` and `m > n` (overparametrized). The head `a` is the
/// final linear layer. tanh keeps the model smooth enough for the
/// zero-loss set to be a manifold and the model gradient bounded on any
/// box.
#[derive(Debug, Clone)]
pub struct RegressionToy {
    n: usize,
    width: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    sup_model_grad_sq: f64,
    grad_lipschitz: f64,
}

impl RegressionToy {
    /// Seeded toy: inputs then targets drawn independently from a standard
    /// normal (generic targets).
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let inputs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let targets: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        Self::with_data_checked(inputs, targets, m)
    }

    /// Toy over explicit data, for interpolation and rank edge cases.
    pub fn with_data(inputs: Vec<f64>, targets: Vec<f64>, width: usize) -> Result<Self> {
        let m = 3 * width;
        Self::with_data_checked(inputs, targets, m)
    }

    fn with_data_checked(inputs: Vec<f64>, targets: Vec<f64>, m: usize) -> Result<Self> {
        let n = inputs.len();
        if n == 0 || targets.len() != n {
            return Err(Error::InvalidParameter {
                name: "n",
                message: "need matching nonempty inputs/targets".into(),
            });
        }
        if m % 3 != 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                message: format!("parameter count must be 3*width, got {m}"),
            });
        }
        if m <= n {
            return Err(Error::InvalidParameter {
                name: "m",
                message: format!("overparametrization requires m > n*k, got m={m}, n={n}, k=1"),
            });
        }
        let mut toy = RegressionToy {
            n,
            width: m / 3,
            inputs,
            targets,
            sup_model_grad_sq: 0.0,
            grad_lipschitz: 0.0,
        };
        toy.sup_model_grad_sq = toy.estimate_sup_model_grad_sq();
        toy.grad_lipschitz = toy.estimate_grad_lipschitz();
        Ok(toy)
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        3 * self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `(1/n) sum y_i^2`, the constant of the high-risk lower bound.
    pub fn mean_square_targets(&self) -> f64 {
        self.targets.iter().map(|y| y * y).sum::<f64>() / self.n as f64
    }

    /// Model output at one input.
    pub fn model(&self, theta: &[f64], x: f64) -> f64 {
        let (a, w, b) = self.split(theta);
        let mut h = 0.0;
        for j in 0..self.width {
            h += a[j] * (w[j] * x + b[j]).tanh();
        }
        h
    }

    /// Exact model gradient `d h / d theta` at one input.
    pub fn model_grad(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let (a, w, b) = self.split(theta);
        let width = self.width;
        for j in 0..width {
            let t = (w[j] * x + b[j]).tanh();
            let sech2 = 1.0 - t * t;
            out[j] = t;
            out[width + j] = a[j] * sech2 * x;
            out[2 * width + j] = a[j] * sech2;
        }
    }

    /// Per-sample loss `L_i = (h(theta, x_i) - y_i)^2 / 2`.
    pub fn sample_loss(&self, i: usize, theta: &[f64]) -> f64 {
        let e = self.model(theta, self.inputs[i]) - self.targets[i];
        0.5 * e * e
    }

    /// Per-sample gradient `grad L_i = (h_i - y_i) grad h_i`.
    pub fn sample_grad(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let e = self.model(theta, self.inputs[i]) - self.targets[i];
        self.model_grad(theta, self.inputs[i], out);
        for v in out.iter_mut() {
            *v *= e;
        }
    }

    /// Full loss `(1/n) sum_i L_i`.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += self.sample_loss(i, theta);
        }
        acc / self.n as f64
    }

    /// Full gradient, accumulated sample by sample so that
    /// `grad L == (1/n) sum_i grad L_i` holds exactly in floats.
    pub fn grad(&self, theta: &[f64], out: &mut [f64]) {
        let m = self.dim();
        out.fill(0.0);
        let mut g_i = vec![0.0; m];
        for i in 0..self.n {
            self.sample_grad(i, theta, &mut g_i);
            for (o, g) in out.iter_mut().zip(&g_i) {
                *o += *g;
            }
        }
        for o in out.iter_mut() {
            *o /= self.n as f64;
        }
    }

    /// Stacked model Jacobian: row `i` is `grad_theta h(theta, x_i)`.
    pub fn model_jacobian(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut jac = vec![0.0; self.n * m];
        for i in 0..self.n {
            self.model_grad(theta, self.inputs[i], &mut jac[i * m..(i + 1) * m]);
        }
        jac
    }

    /// Supremum of `|grad_theta h|^2` over the working box and the data
    /// points. For the tanh model this has a closed form: per unit the
    /// maximum of `t^2 + a^2 (1-t^2)^2 (x^2+1)` over `|a| <= 5` and free
    /// preactivation is `25 (x^2+1)`, attained at `a = +-5`, `z = 0`, so
    /// the supremum is `25 * width * (max_i x_i^2 + 1)`.
    pub fn sup_model_grad_sq(&self) -> f64 {
        self.sup_model_grad_sq
    }

    /// Estimated one-sided Lipschitz constant of `grad L` on the working
    /// box (finite-difference Hessian power iteration, safety factor 1.1).
    pub fn grad_lipschitz_estimate(&self) -> f64 {
        self.grad_lipschitz
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        assert_eq!(theta.len(), self.dim(), "dimension mismatch");
        let w = self.width;
        (&theta[..w], &theta[w..2 * w], &theta[2 * w..])
    }

    fn estimate_sup_model_grad_sq(&self) -> f64 {
        let half = 5.0f64;
        let x_sq_max = self.inputs.iter().map(|x| x * x).fold(0.0f64, f64::max);
        half * half * self.width as f64 * (x_sq_max + 1.0)
    }

    fn estimate_grad_lipschitz(&self) -> f64 {
        let m = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(SUP_SWEEP_SEED ^ 0xA5A5);
        let normal = StandardNormal;
        let h = 1e-5;
        let mut sup = 0.0f64;
        let mut gp = vec![0.0; m];
        let mut gm = vec![0.0; m];
        for _ in 0..SUP_SWEEP_POINTS {
            let theta: Vec<f64> =
                (0..m).map(|_| rand::Rng::gen_range(&mut rng, -5.0..=5.0)).collect();
            // Power iteration on the finite-difference Hessian-vector map.
            let mut v: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
            let nv = linalg::norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            let mut lam = 0.0;
            for _ in 0..8 {
                let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
                let tm: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
                self.grad(&tp, &mut gp);
                self.grad(&tm, &mut gm);
                let hv: Vec<f64> = gp.iter().zip(&gm).map(|(p, q)| (p - q) / (2.0 * h)).collect();
                lam = linalg::norm(&hv);
                if lam < 1e-12 {
                    break;
                }
                v = hv.iter().map(|z| z / lam).collect();
            }
            sup = sup.max(lam);
        }
        1.1 * sup
    }
}
