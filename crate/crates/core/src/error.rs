use thiserror::Error;

use crate::c2rm::C2rmError;
use crate::dtw::DtwError;
use crate::eval::EvalError;
use crate::ingest::IngestError;
use crate::nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    C2rm(#[from] C2rmError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by numerics (divergence, overflow) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Nn(
                NnError::Diverged { .. }
                    | NnError::NonFiniteActivation
                    | NnError::NonFiniteGradient
            )
        )
    }
}
