//! Bidirectional recurrent models and MLP baselines with hand-written
//! reverse-mode gradients.
//!
//! Every model maps a `seq_len x F` impact-factor block to `output_len`
//! scalars. All parameters live in one flat vector described by a
//! [`ParamLayout`], which keeps the optimizer, the gradient checker and the
//! checkpoint format architecture-agnostic.

mod checkpoint;
mod gradcheck;
mod layout;
mod mlp;
mod model;
mod recurrent;
mod train;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layout::{ParamLayout, TensorSlot};
pub use model::{loss_mse, Forecast, ModelParams};
pub use recurrent::{cell_forward, CellState, CellWeights};
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction length {pred} differs from label length {label}")]
    LengthMismatch { pred: usize, label: usize },
    #[error("non-finite activation during forward pass")]
    NonFiniteActivation,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Birnn,
    Bilstm,
    Bigru,
    NaiveMlp,
    SmartMlp,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Birnn,
        Architecture::Bilstm,
        Architecture::Bigru,
        Architecture::NaiveMlp,
        Architecture::SmartMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Birnn => "birnn",
            Architecture::Bilstm => "bilstm",
            Architecture::Bigru => "bigru",
            Architecture::NaiveMlp => "naive_mlp",
            Architecture::SmartMlp => "smart_mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Architecture> {
        Architecture::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            Architecture::Birnn => Some(CellKind::Rnn),
            Architecture::Bilstm => Some(CellKind::Lstm),
            Architecture::Bigru => Some(CellKind::Gru),
            Architecture::NaiveMlp | Architecture::SmartMlp => None,
        }
    }
}

/// Recurrent cell type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// `h = relu(Wx x + Wh h + b)`
    Rnn,
    /// Gates ordered input, forget, candidate, output.
    Lstm,
    /// Gates ordered update, reset, candidate; `h = (1-z) h_prev + z n`.
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Hidden-layer activation of the MLP baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Stacked layers per direction (recurrent) or hidden layers (MLP, always 1).
    pub layers: usize,
    pub seq_len: usize,
    pub output_len: usize,
    pub mlp_activation: Activation,
}

impl ModelSpec {
    pub fn new(arch: Architecture, input_dim: usize) -> Self {
        ModelSpec {
            arch,
            input_dim,
            hidden_dim: 32,
            layers: 2,
            seq_len: 24,
            output_len: 3,
            mlp_activation: Activation::Relu,
        }
    }

    pub fn with_hidden(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_window(mut self, seq_len: usize, output_len: usize) -> Self {
        self.seq_len = seq_len;
        self.output_len = output_len;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.mlp_activation = activation;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(format!("{msg}: {self:?}")));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.seq_len == 0 {
            return bad("dimensions must be positive");
        }
        if self.output_len == 0 {
            return bad("output_len must be positive");
        }
        if self.arch.cell().is_some() {
            if self.layers == 0 {
                return bad("recurrent models need at least one layer");
            }
            // Predictions are read off the last `output_len` timesteps.
            if self.output_len > self.seq_len {
                return bad("output_len exceeds seq_len");
            }
        }
        Ok(())
    }
}
