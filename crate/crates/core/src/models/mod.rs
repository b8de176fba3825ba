//! Binary classifiers: an IRLS logistic regression baseline and gradient
//! boosted regression trees on the log-loss. Both are fitted deterministically
//! and predict probabilities.

mod gbm;
mod logistic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Matrix, Standardizer};

pub use gbm::{fit_gbm, fit_gbm_traced, log_loss, predict_proba_gbm, GbmModel, Node, Tree};
pub use logistic::{
    fit_logistic, penalized_gradient, penalized_log_likelihood, predict_proba_logistic,
    LogisticModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("logistic fit diverged (non-finite coefficients)")]
    Diverged,
    #[error("row width {actual} does not match model width {expected}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// L2 penalty on the weights; the intercept is not penalized.
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            ridge: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainConfig {
    pub gbm: GbmParams,
    pub logistic: LogisticParams,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let g = &self.gbm;
        if g.n_trees < 1 {
            return Err(ModelError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if !(g.learning_rate > 0.0 && g.learning_rate <= 1.0) {
            return Err(ModelError::InvalidConfig("learning_rate must be in (0, 1]".into()));
        }
        if g.max_depth < 1 {
            return Err(ModelError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if g.min_samples_leaf < 1 {
            return Err(ModelError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        let l = &self.logistic;
        if !(l.ridge >= 0.0 && l.tol > 0.0 && l.max_iter >= 1) {
            return Err(ModelError::InvalidConfig("logistic ridge/tol/max_iter out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Gbm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Gbm => "gbm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(ModelKind::Logistic),
            "gbm" => Ok(ModelKind::Gbm),
            other => Err(format!("unknown model {other:?} (expected logistic or gbm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Logistic(LogisticModel),
    Gbm(GbmModel),
}

impl Model {
    pub fn fit(kind: ModelKind, x: &Matrix, y: &[u8], config: &TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(match kind {
            ModelKind::Logistic => Model::Logistic(fit_logistic(x, y, &config.logistic)?),
            ModelKind::Gbm => Model::Gbm(fit_gbm(x, y, &config.gbm)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Logistic(_) => ModelKind::Logistic,
            Model::Gbm(_) => ModelKind::Gbm,
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        match self {
            Model::Logistic(m) => predict_proba_logistic(m, x),
            Model::Gbm(m) => predict_proba_gbm(m, x),
        }
    }
}

/// On-disk model: the fitted model plus everything needed to score raw
/// encoded rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub version: String,
    pub config: TrainConfig,
    pub columns: Vec<String>,
    pub standardizer: Standardizer,
    pub model: Model,
    /// Free-form run provenance (resampling, seed, input digest).
    #[serde(default)]
    pub run: serde_json::Value,
}

impl SavedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Standardize unscaled encoded rows and score them.
    pub fn predict_proba(&self, raw: &Matrix) -> Result<Vec<f64>, ModelError> {
        let mut x = raw.clone();
        if x.n_cols() != self.standardizer.n_cols {
            return Err(ModelError::WidthMismatch {
                expected: self.standardizer.n_cols,
                actual: x.n_cols(),
            });
        }
        for i in 0..x.n_rows() {
            self.standardizer.apply_row(x.row_mut(i));
        }
        self.model.predict_proba(&x)
    }
}

pub(crate) fn check_training(x: &Matrix, y: &[u8]) -> Result<f64, ModelError> {
    if x.n_rows() == 0 {
        return Err(ModelError::Empty);
    }
    assert_eq!(x.n_rows(), y.len(), "labels and rows must align");
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(pos as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(20.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.gbm.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.gbm.max_depth = 0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.gbm.n_trees = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("GBM".parse::<ModelKind>(), Ok(ModelKind::Gbm));
        assert_eq!("logistic".parse::<ModelKind>(), Ok(ModelKind::Logistic));
        assert!("forest".parse::<ModelKind>().is_err());
    }
}
