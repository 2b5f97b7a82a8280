//! HTTP seam. The client only ever sees [`Transport`], so tests swap in
//! [`MockTransport`] and never touch the network.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        HttpResponse { status, body: body.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking transport over ureq. Non-2xx statuses come back as responses,
/// not errors, so the client can classify them.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build();
        UreqTransport { agent: config.into() }
    }
}

impl Transport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self.agent.post(&request.url);
        for (k, v) in &request.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        let mut resp = builder.content_type("application/json").send(request.body.as_bytes()).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_ureq)?;
        Ok(HttpResponse { status, body })
    }
}

fn map_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}

type Handler = dyn Fn(&HttpRequest, usize) -> Result<HttpResponse, TransportError> + Send + Sync;

/// In-process transport driven by a closure. The closure receives the
/// request and the zero-based call index. Counts calls and tracks the
/// peak number of concurrent requests.
#[derive(Clone)]
pub struct MockTransport {
    handler: Arc<Handler>,
    calls: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    delay: Duration,
    log: Arc<Mutex<Vec<HttpRequest>>>,
}

impl MockTransport {
    pub fn new<F>(handler: F) -> Self
    where
        F: Fn(&HttpRequest, usize) -> Result<HttpResponse, TransportError> + Send + Sync + 'static,
    {
        MockTransport {
            handler: Arc::new(handler),
            calls: Arc::new(AtomicUsize::new(0)),
            in_flight: Arc::new(AtomicUsize::new(0)),
            peak: Arc::new(AtomicUsize::new(0)),
            delay: Duration::ZERO,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }

    /// Always answers 200 with `text` as the completion.
    pub fn constant(text: impl Into<String>) -> Self {
        let body = chat_response(&text.into());
        Self::new(move |_, _| Ok(HttpResponse::new(200, body.clone())))
    }

    /// Replays `script` in order, repeating the last entry once exhausted.
    pub fn scripted(script: Vec<Result<HttpResponse, TransportError>>) -> Self {
        assert!(!script.is_empty(), "script must not be empty");
        Self::new(move |_, i| script[i.min(script.len() - 1)].clone())
    }

    /// Holds every request for `delay` before answering.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().expect("mock log").clone()
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.log.lock().expect("mock log").push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = (self.handler)(request, index);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// A minimal chat-completions response body carrying `text`.
pub fn chat_response(text: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    })
    .to_string()
}

/// The user message inside a chat-completions request body.
pub fn request_prompt(request: &HttpRequest) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(&request.body).ok()?;
    v["messages"][0]["content"].as_str().map(str::to_string)
}
