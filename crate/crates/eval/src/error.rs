use std::path::PathBuf;

use rarex_core::error::{CorpusError, EmbeddingError, PromptError, TrainError, WeightError};
use rarex_gateway::GatewayError;
use thiserror::Error;

/// Errors that abort a run. Per-instance failures are recorded as INVALID
/// predictions instead.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{0}")]
    MissingPrerequisite(String),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

impl EvalError {
    /// Whether the error stems from configuration or missing inputs rather
    /// than from a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            EvalError::Spec(_) | EvalError::MissingPrerequisite(_) | EvalError::Weights(_) => true,
            EvalError::Gateway(g) => matches!(g, GatewayError::Config(_) | GatewayError::MissingApiKey(_)),
            _ => false,
        }
    }
}
