use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("authentication failed (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("gave up after {attempts} attempt(s); last status {last_status}")]
    RetriesExhausted { attempts: u32, last_status: u16 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("cache error on {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl GatewayError {
    /// Short machine-readable kind, used in report annotations.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Config(_) => "config",
            GatewayError::MissingApiKey(_) => "missing_api_key",
            GatewayError::Auth { .. } => "auth",
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::RetriesExhausted { .. } => "retries_exhausted",
            GatewayError::Http { .. } => "http",
            GatewayError::MalformedResponse(_) => "malformed_response",
            GatewayError::Transport(_) => "transport",
            GatewayError::EmptyPrompt => "empty_prompt",
            GatewayError::Cache { .. } => "cache",
        }
    }
}
