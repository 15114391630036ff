use crate::error::{Error, Result};
use crate::models::LinearModel;

/// Full-batch Adam with bias correction and decoupled weight decay.
///
/// Parameters are laid out as `[w.., b]`; weight decay applies to `w` only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update of `params` given `grad`. The first `n_decayed` coordinates
    /// receive weight decay. A non-finite gradient, or one whose square
    /// overflows, leaves everything untouched and returns an error.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], n_decayed: usize) -> Result<()> {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step: self.t,
                what: format!("gradient coordinate {k} = {}", grad[k]),
            });
        }
        let t = self.t + 1;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let m: Vec<f64> = self
            .m
            .iter()
            .zip(grad)
            .map(|(m, g)| self.beta1 * m + (1.0 - self.beta1) * g)
            .collect();
        let v: Vec<f64> = self
            .v
            .iter()
            .zip(grad)
            .map(|(v, g)| self.beta2 * v + (1.0 - self.beta2) * g * g)
            .collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: self.t,
                what: format!("second moment overflow at coordinate {k}"),
            });
        }
        for (k, p) in params.iter_mut().enumerate() {
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let mut delta = m_hat / (v_hat.sqrt() + self.eps);
            if k < n_decayed {
                delta += self.weight_decay * *p;
            }
            *p -= self.lr * delta;
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}

/// Applies one Adam update to a linear model.
pub fn adam_step(
    state: &mut AdamState,
    model: &mut LinearModel,
    grad_w: &[f64],
    grad_b: f64,
) -> Result<()> {
    let mut params = model.params();
    let mut grad = grad_w.to_vec();
    grad.push(grad_b);
    state.update(&mut params, &grad, model.dim())?;
    *model = LinearModel::from_params(&params, model.task);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Task;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut st = AdamState::new(3, 1e-2, 0.0);
        let mut m = LinearModel {
            w: vec![1.0, -2.0],
            b: 0.3,
            task: Task::Regression,
        };
        let before = m.clone();
        for _ in 0..10 {
            adam_step(&mut st, &mut m, &[0.0, 0.0], 0.0).unwrap();
        }
        assert_eq!(m, before);
        assert_eq!(st.t, 10);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 1e-3;
        let mut st = AdamState::new(4, lr, 0.0);
        let mut p = vec![0.0; 4];
        let g = [3.0, -0.2, 1e-3, -50.0];
        st.update(&mut p, &g, 3).unwrap();
        for (pk, gk) in p.iter().zip(&g) {
            // |g| / (|g| + eps) with eps = 1e-8
            let expect = -lr * gk.signum() * gk.abs() / (gk.abs() + 1e-8);
            assert!((pk - expect).abs() < 1e-15, "{pk} vs {expect}");
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut st = AdamState::new(3, 0.0, 0.5);
        let mut p = vec![1.0, 2.0, 3.0];
        st.update(&mut p, &[1.0, -1.0, 2.0], 2).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn weight_decay_skips_bias() {
        let mut st = AdamState::new(2, 0.1, 1.0);
        let mut p = vec![1.0, 1.0];
        st.update(&mut p, &[0.0, 0.0], 1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut st = AdamState::new(2, 0.1, 0.0);
        let mut p = vec![1.0, 1.0];
        let err = st.update(&mut p, &[f64::NAN, 0.0], 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut st = AdamState::new(3, 1e-2, 1e-3);
            let mut p = vec![0.1, 0.2, 0.3];
            for k in 0..100 {
                let g: Vec<f64> = p.iter().map(|x| x * 2.0 - (k as f64).sin()).collect();
                st.update(&mut p, &g, 2).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
