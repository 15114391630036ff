//! The five training methods and the shared full-batch training loop.

mod objective;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error};

pub use objective::{EnvTerms, Evaluation, Objective, TrainEnv, Want};
pub use train::{train, train_on, TrainOutput, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ANDMask")]
    AndMask,
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "IGA")]
    Iga,
    #[serde(rename = "IRMv1")]
    IrmV1,
    Oracle,
}

impl Method {
    /// All methods in table (alphabetical) order.
    pub const ALL: [Method; 5] = [
        Method::AndMask,
        Method::Erm,
        Method::Iga,
        Method::IrmV1,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AndMask => "ANDMask",
            Method::Erm => "ERM",
            Method::Iga => "IGA",
            Method::IrmV1 => "IRMv1",
            Method::Oracle => "Oracle",
        }
    }

    /// Whether the method trains on data with randomized spurious features.
    pub fn is_oracle(self) -> bool {
        self == Method::Oracle
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, Method::IrmV1 | Method::Iga)
    }

    pub fn uses_tau(self) -> bool {
        self == Method::AndMask
    }

    /// Stable numeric label used to derive random streams.
    pub fn stream_label(self) -> u64 {
        match self {
            Method::Erm => 10,
            Method::IrmV1 => 11,
            Method::Iga => 12,
            Method::AndMask => 13,
            Method::Oracle => 14,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .map_or_else(|| config(format!("unknown method '{s}'")), Ok)
    }
}

/// Hyperparameters of one training trial.
#[derive(Clone, Debug, PartialEq)]
pub struct HParams {
    pub method: Method,
    pub lr: f64,
    pub weight_decay: f64,
    /// Penalty weight (IRMv1, IGA); zero otherwise.
    pub lambda: f64,
    /// Sign-agreement threshold (ANDMask); zero otherwise.
    pub tau: f64,
    pub steps: u64,
}

impl HParams {
    pub fn new(method: Method, lr: f64) -> Self {
        Self {
            method,
            lr,
            weight_decay: 0.0,
            lambda: 0.0,
            tau: 0.0,
            steps: 10_000,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return config(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || self.lambda.is_nan()
            || self.lambda < 0.0
        {
            return config("weight_decay and lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return config(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.name().to_uppercase().parse::<Method>().unwrap(), m);
        }
        assert!("icp".parse::<Method>().is_err());
        let mut sorted = Method::ALL.map(Method::name);
        sorted.sort_unstable();
        assert_eq!(sorted, Method::ALL.map(Method::name));
    }

    #[test]
    fn hparams_validation() {
        let mut hp = HParams::new(Method::AndMask, 1e-3);
        assert!(hp.validate().is_ok());
        hp.tau = 1.5;
        assert!(hp.validate().is_err());
        hp.tau = 0.5;
        hp.lr = 0.0;
        assert!(hp.validate().is_err());
    }
}
