//! Per-environment risks and the method objectives assembled from them.
//!
//! Parameters are handled as a flat vector `θ = [w.., b]` and every row is
//! implicitly augmented with a trailing 1.

use crate::error::{config, Error, Result};
use crate::math::dot;
use crate::models::sigmoid;
use crate::problems::{Split, Task};

/// Quantities of one environment at one parameter value.
#[derive(Clone, Debug)]
pub struct EnvTerms {
    /// Mean risk; `None` when not requested for a logistic environment.
    pub risk: Option<f64>,
    pub grad: Vec<f64>,
    /// Scale gradient `D = d/dα R(α·f)` at `α = 1`.
    pub scale: f64,
    pub scale_grad: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Want {
    pub risk: bool,
    pub scale: bool,
}

/// One training environment, ready for repeated evaluation.
///
/// Squared-error risks are quadratic in `θ`, so regression environments keep
/// only their second moments and evaluate in `O(d²)`. Logistic environments
/// keep the rows.
#[derive(Clone, Debug)]
pub enum TrainEnv<'a> {
    Moments {
        /// `(1/n) Σ x̃ x̃ᵀ`, row-major `p × p` with `p = d + 1`.
        gram: Vec<f64>,
        /// `(1/n) Σ x̃ y`.
        xty: Vec<f64>,
        /// `(1/n) Σ y²`.
        yy: f64,
        n: usize,
    },
    Logistic(&'a Split),
}

impl<'a> TrainEnv<'a> {
    pub fn new(split: &'a Split) -> Result<Self> {
        if split.is_empty() {
            return Err(Error::EmptySplit);
        }
        Ok(match split.task {
            Task::Classification => TrainEnv::Logistic(split),
            Task::Regression => {
                let d = split.dim();
                let p = d + 1;
                let n = split.len();
                let mut gram = vec![0.0; p * p];
                let mut xty = vec![0.0; p];
                let mut yy = 0.0;
                let mut aug = vec![1.0; p];
                for (row, &y) in split.x.row_iter().zip(&split.y) {
                    aug[..d].copy_from_slice(row);
                    for i in 0..p {
                        let gi = &mut gram[i * p..(i + 1) * p];
                        for j in i..p {
                            gi[j] += aug[i] * aug[j];
                        }
                        xty[i] += aug[i] * y;
                    }
                    yy += y * y;
                }
                let inv = 1.0 / n as f64;
                for i in 0..p {
                    for j in i..p {
                        let v = gram[i * p + j] * inv;
                        gram[i * p + j] = v;
                        gram[j * p + i] = v;
                    }
                }
                xty.iter_mut().for_each(|v| *v *= inv);
                TrainEnv::Moments {
                    gram,
                    xty,
                    yy: yy * inv,
                    n,
                }
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            TrainEnv::Moments { n, .. } => *n,
            TrainEnv::Logistic(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_params(&self) -> usize {
        match self {
            TrainEnv::Moments { xty, .. } => xty.len(),
            TrainEnv::Logistic(s) => s.dim() + 1,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TrainEnv::Moments { .. } => Task::Regression,
            TrainEnv::Logistic(_) => Task::Classification,
        }
    }

    fn gram_times(gram: &[f64], v: &[f64]) -> Vec<f64> {
        let p = v.len();
        (0..p).map(|i| dot(&gram[i * p..(i + 1) * p], v)).collect()
    }

    pub fn terms(&self, theta: &[f64], want: Want) -> EnvTerms {
        match self {
            TrainEnv::Moments { gram, xty, yy, .. } => {
                // with u = Gθ: R = θ·u − 2θ·c + q, ∇R = 2(u − c),
                // D = 2(θ·u − θ·c), ∇D = 2(2u − c)
                let u = Self::gram_times(gram, theta);
                let tu = dot(theta, &u);
                let tc = dot(theta, xty);
                let grad = u.iter().zip(xty).map(|(a, c)| 2.0 * (a - c)).collect();
                let (scale, scale_grad) = if want.scale {
                    let sg = u
                        .iter()
                        .zip(xty)
                        .map(|(a, c)| 2.0 * (2.0 * a - c))
                        .collect();
                    (2.0 * (tu - tc), sg)
                } else {
                    (0.0, Vec::new())
                };
                EnvTerms {
                    risk: Some(tu - 2.0 * tc + yy),
                    grad,
                    scale,
                    scale_grad,
                }
            }
            TrainEnv::Logistic(split) => {
                let p = theta.len();
                let d = p - 1;
                let (w, b) = (&theta[..d], theta[d]);
                let mut risk = 0.0;
                let mut grad = vec![0.0; p];
                let mut scale = 0.0;
                let mut scale_grad = if want.scale { vec![0.0; p] } else { Vec::new() };
                for (row, &y) in split.x.row_iter().zip(&split.y) {
                    let z = dot(row, w) + b;
                    let e = (-z.abs()).exp();
                    let s = if z >= 0.0 {
                        1.0 / (1.0 + e)
                    } else {
                        e / (1.0 + e)
                    };
                    let r = s - y;
                    for (g, x) in grad[..d].iter_mut().zip(row) {
                        *g += r * x;
                    }
                    grad[d] += r;
                    if want.scale {
                        scale += r * z;
                        let c = r + s * (1.0 - s) * z;
                        for (g, x) in scale_grad[..d].iter_mut().zip(row) {
                            *g += c * x;
                        }
                        scale_grad[d] += c;
                    }
                    if want.risk {
                        risk += z.max(0.0) + e.ln_1p() - y * z;
                    }
                }
                let inv = 1.0 / split.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                scale_grad.iter_mut().for_each(|g| *g *= inv);
                EnvTerms {
                    risk: want.risk.then_some(risk * inv),
                    grad,
                    scale: scale * inv,
                    scale_grad,
                }
            }
        }
    }

    /// Hessian of the mean risk at `θ` applied to `v`.
    pub fn hess_vec(&self, theta: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            TrainEnv::Moments { gram, .. } => Self::gram_times(gram, v)
                .into_iter()
                .map(|a| 2.0 * a)
                .collect(),
            TrainEnv::Logistic(split) => {
                let p = theta.len();
                let d = p - 1;
                let mut out = vec![0.0; p];
                for row in split.x.row_iter() {
                    let z = dot(row, &theta[..d]) + theta[d];
                    let s = sigmoid(z);
                    let c = s * (1.0 - s) * (dot(row, &v[..d]) + v[d]);
                    for (o, x) in out[..d].iter_mut().zip(row) {
                        *o += c * x;
                    }
                    out[d] += c;
                }
                let inv = 1.0 / split.len() as f64;
                out.iter_mut().for_each(|o| *o *= inv);
                out
            }
        }
    }
}

/// Objective value (when requested) and gradient over `θ`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: Option<f64>,
    pub grad: Vec<f64>,
}

/// The training environments of one run, shared by all methods.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    envs: Vec<TrainEnv<'a>>,
}

fn add_scaled(acc: &mut [f64], v: &[f64], c: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += c * x;
    }
}

impl<'a> Objective<'a> {
    pub fn new<I>(splits: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Split>,
    {
        let envs = splits
            .into_iter()
            .map(TrainEnv::new)
            .collect::<Result<Vec<_>>>()?;
        let Some(first) = envs.first() else {
            return config("no training environments");
        };
        let (task, p) = (first.task(), first.n_params());
        for e in &envs[1..] {
            if e.task() != task {
                return Err(Error::Task(
                    "environments mix regression and classification",
                ));
            }
            if e.n_params() != p {
                return Err(Error::Dimension {
                    expected: p - 1,
                    got: e.n_params() - 1,
                    context: "environment feature dimension",
                });
            }
        }
        Ok(Self { envs })
    }

    pub fn envs(&self) -> &[TrainEnv<'a>] {
        &self.envs
    }

    pub fn n_params(&self) -> usize {
        self.envs[0].n_params()
    }

    pub fn task(&self) -> Task {
        self.envs[0].task()
    }

    fn all_terms(&self, theta: &[f64], want: Want) -> Vec<EnvTerms> {
        self.envs.iter().map(|e| e.terms(theta, want)).collect()
    }

    fn sum_risks(terms: &[EnvTerms], weights: impl Iterator<Item = f64>) -> Option<f64> {
        terms
            .iter()
            .zip(weights)
            .map(|(t, w)| t.risk.map(|r| w * r))
            .sum()
    }

    /// Risk of the pooled training data: the `n`-weighted average of
    /// per-environment risks.
    pub fn pooled_risk(&self, theta: &[f64]) -> f64 {
        self.grad_erm(theta, true).value.expect("risk requested")
    }

    /// Empirical risk minimization over the union of the training splits.
    pub fn grad_erm(&self, theta: &[f64], value: bool) -> Evaluation {
        let terms = self.all_terms(
            theta,
            Want {
                risk: value,
                scale: false,
            },
        );
        let total: usize = self.envs.iter().map(TrainEnv::len).sum();
        let weights: Vec<f64> = self
            .envs
            .iter()
            .map(|e| e.len() as f64 / total as f64)
            .collect();
        let mut grad = vec![0.0; theta.len()];
        for (t, &w) in terms.iter().zip(&weights) {
            add_scaled(&mut grad, &t.grad, w);
        }
        Evaluation {
            value: value
                .then(|| Self::sum_risks(&terms, weights.iter().copied()))
                .flatten(),
            grad,
        }
    }

    /// `Σ_e R_e + λ Σ_e D_e²` with `D_e` the scale gradient of environment
    /// `e`.
    pub fn grad_irmv1(&self, theta: &[f64], lambda: f64, value: bool) -> Evaluation {
        let terms = self.all_terms(
            theta,
            Want {
                risk: value,
                scale: true,
            },
        );
        let mut grad = vec![0.0; theta.len()];
        let mut penalty = 0.0;
        for t in &terms {
            add_scaled(&mut grad, &t.grad, 1.0);
            add_scaled(&mut grad, &t.scale_grad, 2.0 * lambda * t.scale);
            penalty += t.scale * t.scale;
        }
        Evaluation {
            value: value
                .then(|| {
                    Self::sum_risks(&terms, std::iter::repeat(1.0)).map(|r| r + lambda * penalty)
                })
                .flatten(),
            grad,
        }
    }

    /// Variance of the per-environment gradients, `Σ_e ‖g_e − ḡ‖²`.
    pub fn gradient_variance(&self, theta: &[f64]) -> f64 {
        let terms = self.all_terms(theta, Want::default());
        let mean = Self::mean_grad(&terms, theta.len());
        terms
            .iter()
            .map(|t| {
                t.grad
                    .iter()
                    .zip(&mean)
                    .map(|(g, m)| (g - m).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }

    fn mean_grad(terms: &[EnvTerms], p: usize) -> Vec<f64> {
        let mut mean = vec![0.0; p];
        for t in terms {
            add_scaled(&mut mean, &t.grad, 1.0 / terms.len() as f64);
        }
        mean
    }

    /// `Σ_e R_e + λ Σ_e ‖g_e − ḡ‖²`.
    ///
    /// The penalty gradient is `2 Σ_e H_e (g_e − ḡ)`; the `H̄` term drops out
    /// because the deviations sum to zero.
    pub fn grad_iga(&self, theta: &[f64], lambda: f64, value: bool) -> Evaluation {
        let terms = self.all_terms(
            theta,
            Want {
                risk: value,
                scale: false,
            },
        );
        let p = theta.len();
        let mean = Self::mean_grad(&terms, p);
        let mut grad = vec![0.0; p];
        let mut penalty = 0.0;
        for (env, t) in self.envs.iter().zip(&terms) {
            add_scaled(&mut grad, &t.grad, 1.0);
            let dev: Vec<f64> = t.grad.iter().zip(&mean).map(|(g, m)| g - m).collect();
            penalty += dot(&dev, &dev);
            if lambda != 0.0 {
                let hd = env.hess_vec(theta, &dev);
                add_scaled(&mut grad, &hd, 2.0 * lambda);
            }
        }
        Evaluation {
            value: value
                .then(|| {
                    Self::sum_risks(&terms, std::iter::repeat(1.0)).map(|r| r + lambda * penalty)
                })
                .flatten(),
            grad,
        }
    }

    /// Mean of the per-environment gradients, zeroed on every coordinate
    /// whose sign agreement `|Σ_e sign(g_e)| / n_env` is below `tau`.
    /// The reported value is the sum of per-environment risks.
    pub fn grad_andmask(&self, theta: &[f64], tau: f64, value: bool) -> Evaluation {
        let terms = self.all_terms(
            theta,
            Want {
                risk: value,
                scale: false,
            },
        );
        let n_env = terms.len() as f64;
        let grad = (0..theta.len())
            .map(|k| {
                let mut signs = 0.0;
                let mut sum = 0.0;
                for t in &terms {
                    let g = t.grad[k];
                    signs += if g > 0.0 {
                        1.0
                    } else if g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    sum += g;
                }
                if f64::abs(signs) / n_env >= tau {
                    sum / n_env
                } else {
                    0.0
                }
            })
            .collect();
        Evaluation {
            value: value
                .then(|| Self::sum_risks(&terms, std::iter::repeat(1.0)))
                .flatten(),
            grad,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Mat, RngStream};
    use crate::models::LinearModel;

    fn random_split(task: Task, n: usize, d: usize, seed: u64) -> Split {
        let mut s = RngStream::new(seed);
        let x = Mat::from_vec(n, d, (0..n * d).map(|_| s.standard_normal()).collect()).unwrap();
        let y = (0..n)
            .map(|i| match task {
                Task::Regression => x.row(i).iter().sum::<f64>() + s.standard_normal(),
                Task::Classification => f64::from(s.bernoulli(0.5)),
            })
            .collect();
        Split {
            x,
            y,
            task,
            env_index: 0,
        }
    }

    fn random_theta(p: usize, seed: u64) -> Vec<f64> {
        let mut s = RngStream::new(seed);
        (0..p).map(|_| 0.5 * s.standard_normal()).collect()
    }

    #[test]
    fn moments_match_per_sample_risk() {
        let split = random_split(Task::Regression, 200, 4, 1);
        let env = TrainEnv::new(&split).unwrap();
        let theta = random_theta(5, 2);
        let t = env.terms(
            &theta,
            Want {
                risk: true,
                scale: true,
            },
        );
        let model = LinearModel::from_params(&theta, Task::Regression);
        let rg = model.risk_and_grad(&split).unwrap();
        assert!((t.risk.unwrap() - rg.risk).abs() < 1e-10 * rg.risk.max(1.0));
        for (a, b) in t.grad[..4].iter().zip(&rg.grad_w) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((t.grad[4] - rg.grad_b).abs() < 1e-10);
        assert!((t.scale - model.scale_risk_grad(&split).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn logistic_terms_match_model() {
        let split = random_split(Task::Classification, 150, 3, 4);
        let env = TrainEnv::new(&split).unwrap();
        let theta = random_theta(4, 5);
        let t = env.terms(
            &theta,
            Want {
                risk: true,
                scale: true,
            },
        );
        let model = LinearModel::from_params(&theta, Task::Classification);
        let rg = model.risk_and_grad(&split).unwrap();
        assert!((t.risk.unwrap() - rg.risk).abs() < 1e-14);
        assert!((t.scale - model.scale_risk_grad(&split).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn erm_single_and_duplicated_environment() {
        let a = random_split(Task::Classification, 100, 3, 7);
        let theta = random_theta(4, 8);
        let one = Objective::new([&a]).unwrap().grad_erm(&theta, true);
        let two = Objective::new([&a, &a]).unwrap().grad_erm(&theta, true);
        let rg = LinearModel::from_params(&theta, Task::Classification)
            .risk_and_grad(&a)
            .unwrap();
        assert!((one.value.unwrap() - rg.risk).abs() < 1e-15);
        for k in 0..4 {
            assert!((one.grad[k] - two.grad[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn erm_equals_mean_of_env_gradients() {
        let splits: Vec<Split> = (0..3)
            .map(|e| random_split(Task::Regression, 120, 3, 20 + e))
            .collect();
        let obj = Objective::new(&splits).unwrap();
        let theta = random_theta(4, 9);
        let erm = obj.grad_erm(&theta, false);
        let mut mean = vec![0.0; 4];
        for e in obj.envs() {
            add_scaled(&mut mean, &e.terms(&theta, Want::default()).grad, 1.0 / 3.0);
        }
        for (a, b) in erm.grad.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn irm_lambda_zero_is_summed_risk() {
        let splits: Vec<Split> = (0..3)
            .map(|e| random_split(Task::Classification, 80, 2, 30 + e))
            .collect();
        let obj = Objective::new(&splits).unwrap();
        let theta = random_theta(3, 1);
        let irm = obj.grad_irmv1(&theta, 0.0, true);
        let erm = obj.grad_erm(&theta, true);
        assert!((irm.value.unwrap() - 3.0 * erm.value.unwrap()).abs() < 1e-12);
        for (a, b) in irm.grad.iter().zip(&erm.grad) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn irm_penalty_vanishes_on_exact_fit() {
        let mut split = random_split(Task::Regression, 50, 2, 3);
        let theta = [0.7, -1.2, 0.4];
        split.y = LinearModel::from_params(&theta, Task::Regression)
            .predict(&split.x)
            .unwrap();
        let obj = Objective::new([&split, &split]).unwrap();
        let with = obj.grad_irmv1(&theta, 100.0, true).value.unwrap();
        let without = obj.grad_irmv1(&theta, 0.0, true).value.unwrap();
        assert!((with - without).abs() < 1e-12);
    }

    #[test]
    fn iga_penalty_zero_on_identical_envs() {
        let a = random_split(Task::Classification, 60, 3, 2);
        let obj = Objective::new([&a, &a, &a]).unwrap();
        let theta = random_theta(4, 3);
        assert_eq!(obj.gradient_variance(&theta), 0.0);
        let iga = obj.grad_iga(&theta, 1e3, true);
        let zero = obj.grad_iga(&theta, 0.0, true);
        assert_eq!(iga.value, zero.value);
        assert_eq!(iga.grad, zero.grad);
    }

    #[test]
    fn iga_penalty_constructed_case() {
        // at θ = 0 a regression row contributes −2y·(x, 1) to the gradient
        let mk = |rows: &[(f64, f64)]| Split {
            x: Mat::from_rows(&rows.iter().map(|r| vec![r.0]).collect::<Vec<_>>()).unwrap(),
            y: rows.iter().map(|r| r.1).collect(),
            task: Task::Regression,
            env_index: 0,
        };
        let g1 = mk(&[(1.0, -0.5), (-1.0, 0.5)]);
        let g2 = mk(&[(1.0, -0.5), (-1.0, -0.5)]);
        let obj = Objective::new([&g1, &g2]).unwrap();
        let theta = [0.0, 0.0];
        let grads: Vec<Vec<f64>> = obj
            .envs()
            .iter()
            .map(|e| e.terms(&theta, Want::default()).grad)
            .collect();
        assert_eq!(grads, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((obj.gradient_variance(&theta) - 1.0).abs() < 1e-15);
        let lam = 3.0;
        let v = obj.grad_iga(&theta, lam, true).value.unwrap();
        assert!((v - (0.25 + 0.25 + lam)).abs() < 1e-15);
    }

    #[test]
    fn andmask_examples() {
        // per-environment gradients (+1, +2, −3) on the bias coordinate
        let mk = |y: f64| Split {
            x: Mat::from_rows(&[vec![0.0]]).unwrap(),
            y: vec![y],
            task: Task::Regression,
            env_index: 0,
        };
        let (a, b, c) = (mk(-0.5), mk(-1.0), mk(1.5));
        let obj = Objective::new([&a, &b, &c]).unwrap();
        let theta = [0.0, 0.0];
        let masked = obj.grad_andmask(&theta, 0.5, false);
        assert_eq!(masked.grad[1], 0.0);
        let open = obj.grad_andmask(&theta, 0.0, false);
        assert!((open.grad[1] - 0.0).abs() < 1e-15);
        let erm = obj.grad_erm(&theta, false);
        assert!((open.grad[1] - erm.grad[1]).abs() < 1e-15);

        let s = random_split(Task::Classification, 40, 3, 11);
        let same = Objective::new([&s, &s, &s]).unwrap();
        let th = random_theta(4, 12);
        assert_eq!(
            same.grad_andmask(&th, 1.0, false).grad,
            same.grad_andmask(&th, 0.0, false).grad
        );
    }

    #[test]
    fn mixed_tasks_rejected() {
        let a = random_split(Task::Classification, 10, 2, 1);
        let b = random_split(Task::Regression, 10, 2, 2);
        assert!(matches!(Objective::new([&a, &b]), Err(Error::Task(_))));
        let c = random_split(Task::Regression, 10, 3, 2);
        assert!(Objective::new([&b, &c]).is_err());
        assert!(Objective::new(std::iter::empty::<&Split>()).is_err());
    }
}
