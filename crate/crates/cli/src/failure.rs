//! Maps errors to exit codes: 1 for bad configuration or inputs, 2 for
//! failures while running.

use std::fmt;

pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn by(validation: bool, e: impl Into<anyhow::Error>) -> Self {
        if validation {
            Failure::Invalid(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub trait Classify<T> {
    fn invalid(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

impl From<rarex_eval::EvalError> for Failure {
    fn from(e: rarex_eval::EvalError) -> Self {
        Failure::by(e.is_validation(), e)
    }
}

impl From<rarex_core::error::CorpusError> for Failure {
    fn from(e: rarex_core::error::CorpusError) -> Self {
        Failure::by(e.is_validation(), e)
    }
}

impl From<rarex_core::error::EmbeddingError> for Failure {
    fn from(e: rarex_core::error::EmbeddingError) -> Self {
        Failure::by(e.is_validation(), e)
    }
}

impl From<rarex_gateway::GatewayError> for Failure {
    fn from(e: rarex_gateway::GatewayError) -> Self {
        use rarex_gateway::GatewayError::*;
        Failure::by(matches!(e, Config(_) | MissingApiKey(_)), e)
    }
}
