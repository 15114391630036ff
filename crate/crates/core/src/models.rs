//! Linear predictors, their training risks and evaluation metrics.
//!
//! Regression is trained and evaluated with mean squared error. Binary
//! classification is trained with the logistic loss on logits and evaluated
//! with the 0-1 error, thresholding the logit at zero.

use crate::error::{Error, Result};
use crate::math::{dot, Mat};
use crate::problems::{Split, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskGrad {
    pub risk: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn zeros(dim: usize, task: Task) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
            task,
        }
    }

    /// Builds a model from `[w.., b]`.
    pub fn from_params(params: &[f64], task: Task) -> Self {
        let (b, w) = params.split_last().expect("at least the bias");
        Self {
            w: w.to_vec(),
            b: *b,
            task,
        }
    }

    /// Parameters laid out as `[w.., b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.b);
        p
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|v| v.is_finite())
    }

    fn check(&self, split: &Split) -> Result<()> {
        if split.is_empty() {
            return Err(Error::EmptySplit);
        }
        if split.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: split.dim(),
                context: "model/split feature dimension",
            });
        }
        if split.task != self.task {
            return Err(Error::Task("model and split tasks differ"));
        }
        Ok(())
    }

    /// Raw outputs `w·x + b` (logits for classification).
    pub fn predict(&self, x: &Mat) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.cols(),
                context: "predict",
            });
        }
        Ok(x.row_iter().map(|r| dot(r, &self.w) + self.b).collect())
    }

    /// Mean training risk and its exact gradient.
    pub fn risk_and_grad(&self, split: &Split) -> Result<RiskGrad> {
        self.check(split)?;
        let n = split.len() as f64;
        let mut risk = 0.0;
        let mut grad_w = vec![0.0; self.dim()];
        let mut grad_b = 0.0;
        for (row, &y) in split.x.row_iter().zip(&split.y) {
            let z = dot(row, &self.w) + self.b;
            let r = match self.task {
                Task::Regression => {
                    risk += (z - y) * (z - y);
                    2.0 * (z - y)
                }
                Task::Classification => {
                    risk += softplus(z) - y * z;
                    sigmoid(z) - y
                }
            };
            for (g, x) in grad_w.iter_mut().zip(row) {
                *g += r * x;
            }
            grad_b += r;
        }
        grad_w.iter_mut().for_each(|g| *g /= n);
        Ok(RiskGrad {
            risk: risk / n,
            grad_w,
            grad_b: grad_b / n,
        })
    }

    /// Derivative of the risk with respect to a scalar multiplier on the
    /// model output, taken at 1: `d/dα R(α·f)` at `α = 1`.
    pub fn scale_risk_grad(&self, split: &Split) -> Result<f64> {
        self.check(split)?;
        let n = split.len() as f64;
        let total: f64 = split
            .x
            .row_iter()
            .zip(&split.y)
            .map(|(row, &y)| {
                let z = dot(row, &self.w) + self.b;
                match self.task {
                    Task::Regression => 2.0 * (z - y) * z,
                    Task::Classification => (sigmoid(z) - y) * z,
                }
            })
            .sum();
        Ok(total / n)
    }

    /// Fraction of rows where `z > 0` disagrees with `y == 1`.
    pub fn zero_one_error(&self, split: &Split) -> Result<f64> {
        if self.task != Task::Classification || split.task != Task::Classification {
            return Err(Error::Task("0-1 error needs a classification task"));
        }
        self.check(split)?;
        let wrong = split
            .x
            .row_iter()
            .zip(&split.y)
            .filter(|(row, &y)| (dot(row, &self.w) + self.b > 0.0) != (y == 1.0))
            .count();
        Ok(wrong as f64 / split.len() as f64)
    }

    pub fn mse_error(&self, split: &Split) -> Result<f64> {
        if self.task != Task::Regression || split.task != Task::Regression {
            return Err(Error::Task("mse needs a regression task"));
        }
        self.check(split)?;
        let total: f64 = split
            .x
            .row_iter()
            .zip(&split.y)
            .map(|(row, &y)| (dot(row, &self.w) + self.b - y).powi(2))
            .sum();
        Ok(total / split.len() as f64)
    }

    /// The evaluation metric of the split's task: MSE or 0-1 error.
    pub fn error(&self, split: &Split) -> Result<f64> {
        match self.task {
            Task::Regression => self.mse_error(split),
            Task::Classification => self.zero_one_error(split),
        }
    }
}
