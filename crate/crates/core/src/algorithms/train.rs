use super::{HParams, Method, Objective};
use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::models::LinearModel;
use crate::problems::EnvironmentData;

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: LinearModel,
    /// Pooled mean training risk of the final model.
    pub final_train_risk: f64,
    pub diverged: bool,
    pub diagnostic: Option<String>,
}

/// Step-by-step driver of one training run, starting from the zero model.
pub struct Trainer<'o, 'a> {
    objective: &'o Objective<'a>,
    hparams: HParams,
    theta: Vec<f64>,
    adam: AdamState,
}

impl<'o, 'a> Trainer<'o, 'a> {
    pub fn new(objective: &'o Objective<'a>, hparams: &HParams) -> Result<Self> {
        hparams.validate()?;
        let p = objective.n_params();
        Ok(Self {
            objective,
            hparams: hparams.clone(),
            theta: vec![0.0; p],
            adam: AdamState::new(p, hparams.lr, hparams.weight_decay),
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.t
    }

    pub fn model(&self) -> LinearModel {
        LinearModel::from_params(&self.theta, self.objective.task())
    }

    /// The method's objective at the current parameters.
    pub fn objective_value(&self) -> f64 {
        self.evaluate(true).value.expect("value requested")
    }

    fn evaluate(&self, value: bool) -> super::Evaluation {
        let hp = &self.hparams;
        let obj = self.objective;
        match hp.method {
            Method::Erm | Method::Oracle => obj.grad_erm(&self.theta, value),
            Method::IrmV1 => obj.grad_irmv1(&self.theta, hp.lambda, value),
            Method::Iga => obj.grad_iga(&self.theta, hp.lambda, value),
            Method::AndMask => obj.grad_andmask(&self.theta, hp.tau, value),
        }
    }

    /// One full-batch update.
    pub fn step(&mut self) -> Result<()> {
        let eval = self.evaluate(false);
        let n_w = self.theta.len() - 1;
        self.adam.update(&mut self.theta, &eval.grad, n_w)?;
        if let Some(k) = self.theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: self.adam.t,
                what: format!("parameter {k}"),
            });
        }
        Ok(())
    }
}

/// Trains on the train splits of `env_data`.
///
/// The caller passes oracle-randomized environments for [`Method::Oracle`].
pub fn train(env_data: &[EnvironmentData], hparams: &HParams) -> Result<TrainOutput> {
    let objective = Objective::new(env_data.iter().map(|e| &e.train))?;
    train_on(&objective, hparams)
}

/// Runs `hparams.steps` updates from the zero model. Divergence is reported
/// in the output, not as an error.
pub fn train_on(objective: &Objective<'_>, hparams: &HParams) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(objective, hparams)?;
    let mut diagnostic = None;
    for _ in 0..hparams.steps {
        if let Err(e) = trainer.step() {
            diagnostic = Some(e.to_string());
            break;
        }
    }
    let risk = objective.pooled_risk(trainer.params());
    if diagnostic.is_none() && !risk.is_finite() {
        diagnostic = Some(format!("non-finite final training risk {risk}"));
    }
    Ok(TrainOutput {
        model: trainer.model(),
        final_train_risk: risk,
        diverged: diagnostic.is_some(),
        diagnostic,
    })
}
