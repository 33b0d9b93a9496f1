use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelParams, NnError};
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Plain full-batch gradient descent.
    Sgd,
    /// Adaptive moment estimation with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            learning_rate: 0.01,
            seed: 0,
            optimizer: Optimizer::default(),
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(NnError::InvalidConfig(format!("clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Full-batch loss evaluated before each update.
    pub history: Vec<f64>,
}

/// Full-batch training for `config.epochs` updates.
///
/// Non-finite losses or gradients abort with [`NnError::Diverged`].
pub fn train(
    mut params: ModelParams,
    features: &[Array2<f64>],
    labels: &[Vec<f64>],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    if features.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let count = params.param_count();
    let mut m = vec![0.0; count];
    let mut v = vec![0.0; count];
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, mut grad) = match params.loss_and_grad(features, labels, exec) {
            Ok(r) => r,
            Err(NnError::NonFiniteActivation | NnError::NonFiniteGradient) => {
                return Err(NnError::Diverged { epoch, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(NnError::Diverged { epoch, loss });
        }
        history.push(loss);
        if let Some(limit) = config.clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                let s = limit / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = config.learning_rate;
        let values = params.values_mut();
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in values.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let step = (epoch + 1) as i32;
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                for i in 0..count {
                    let g = grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(TrainOutcome { params, history })
}
