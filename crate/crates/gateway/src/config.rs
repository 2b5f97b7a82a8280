//! Endpoint configuration and provider adapters.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

/// Providers speaking the chat-completions dialect. They differ in default
/// base URL only; requests and responses share one shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    OpenaiCompatible,
    Openai,
    Gemini,
    Deepseek,
    /// Offline canned replies; see [`crate::MockTransport`].
    Mock,
}

impl Provider {
    pub fn default_base_url(self) -> Option<&'static str> {
        match self {
            Provider::Openai => Some("https://api.openai.com/v1"),
            Provider::Gemini => Some("https://generativelanguage.googleapis.com/v1beta/openai"),
            Provider::Deepseek => Some("https://api.deepseek.com/v1"),
            Provider::OpenaiCompatible | Provider::Mock => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub provider: Provider,
    /// Falls back to the provider default when empty.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the key; empty for none.
    pub api_key_env: String,
    pub temperature: f64,
    /// Must be set to run with a non-zero temperature.
    pub allow_nonzero_temperature: bool,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub requests_per_second: Option<f64>,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Reply used by the mock provider.
    pub mock_reply: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            provider: Provider::default(),
            base_url: String::new(),
            model_name: String::new(),
            api_key_env: String::new(),
            temperature: 0.0,
            allow_nonzero_temperature: false,
            max_output_tokens: 512,
            request_timeout_secs: 60.0,
            max_retries: 5,
            max_concurrency: 4,
            requests_per_second: None,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            mock_reply: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if self.model_name.trim().is_empty() {
            return bad("model_name is required");
        }
        if self.temperature != 0.0 && !self.allow_nonzero_temperature {
            return bad("temperature must be 0.0 unless allow_nonzero_temperature is set");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite non-negative number");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be at least 1");
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be at least 1");
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return bad("request_timeout_secs must be positive");
        }
        if self.requests_per_second.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return bad("requests_per_second must be positive");
        }
        if self.backoff_max_ms < self.backoff_base_ms {
            return bad("backoff_max_ms must be at least backoff_base_ms");
        }
        if self.provider != Provider::Mock && self.resolved_base_url().is_none() {
            return bad("base_url is required for this provider");
        }
        Ok(())
    }

    pub fn resolved_base_url(&self) -> Option<String> {
        if !self.base_url.trim().is_empty() {
            return Some(self.base_url.trim().trim_end_matches('/').to_string());
        }
        self.provider.default_base_url().map(str::to_string)
    }

    pub fn completions_url(&self) -> Option<String> {
        self.resolved_base_url().map(|b| format!("{b}/chat/completions"))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }

    /// Reads the key from the configured variable; `None` when no variable
    /// is configured.
    pub fn api_key(&self) -> Result<Option<String>, GatewayError> {
        if self.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(GatewayError::MissingApiKey(self.api_key_env.clone())),
        }
    }

    /// Loads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let cfg: EndpointConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
