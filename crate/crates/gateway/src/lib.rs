//! Chat-completions gateway: endpoint config, on-disk response cache,
//! retry with capped exponential backoff, rate limiting and bounded
//! concurrent batches.

pub mod cache;
pub mod client;
pub mod config;
pub mod error;
pub mod limiter;
pub mod transport;

pub use cache::{cache_key, CacheStats, CompletionRecord, ResponseCache};
pub use client::{backoff_schedule, LlmClient};
pub use config::{EndpointConfig, Provider};
pub use error::GatewayError;
pub use limiter::RateLimiter;
pub use transport::{
    chat_response, request_prompt, HttpRequest, HttpResponse, MockTransport, Transport, TransportError, UreqTransport,
};
