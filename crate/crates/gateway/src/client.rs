//! Cached, rate-limited, retrying chat-completions client.

use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::cache::{cache_key, CacheStats, CompletionRecord, ResponseCache};
use crate::config::{EndpointConfig, Provider};
use crate::error::GatewayError;
use crate::limiter::RateLimiter;
use crate::transport::{HttpRequest, MockTransport, Transport, TransportError, UreqTransport};

/// Delays before retries 1..=`retries`. Each raw delay is
/// `base * 2^n` plus jitter drawn from `[0, base * 2^(n-1))`, then capped at
/// `max`; the sequence is non-decreasing.
pub fn backoff_schedule(base_ms: u64, max_ms: u64, retries: u32, seed: u64) -> Vec<Duration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 0u64;
    (0..retries)
        .map(|n| {
            let step = base_ms.saturating_mul(1u64.checked_shl(n).unwrap_or(u64::MAX));
            let jitter_span = if n == 0 { base_ms / 2 } else { step / 2 };
            let jitter = if jitter_span == 0 { 0 } else { rng.random_range(0..jitter_span) };
            let d = step.saturating_add(jitter).min(max_ms).max(prev);
            prev = d;
            Duration::from_millis(d)
        })
        .collect()
}

fn seed_from_key(key: &str) -> u64 {
    let bytes = hex::decode(&key[..16.min(key.len())]).unwrap_or_default();
    let mut arr = [0u8; 8];
    arr[..bytes.len().min(8)].copy_from_slice(&bytes[..bytes.len().min(8)]);
    u64::from_le_bytes(arr)
}

type Sleeper = dyn Fn(Duration) + Send + Sync;

pub struct LlmClient {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: Option<RateLimiter>,
    sleeper: Arc<Sleeper>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl LlmClient {
    /// Validates `config` and picks the transport its provider implies.
    pub fn from_config(config: EndpointConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let transport: Arc<dyn Transport> = match config.provider {
            Provider::Mock => Arc::new(MockTransport::constant(config.mock_reply.clone().unwrap_or_default())),
            _ => Arc::new(UreqTransport::new(config.timeout())),
        };
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        config.validate()?;
        let limiter = config.requests_per_second.map(|r| RateLimiter::new(r, r.max(1.0)));
        Ok(LlmClient { config, transport, cache: None, limiter, sleeper: Arc::new(std::thread::sleep) })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Replaces the sleep used between retries.
    pub fn with_sleeper<F: Fn(Duration) + Send + Sync + 'static>(mut self, f: F) -> Self {
        self.sleeper = Arc::new(f);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.as_ref().map(ResponseCache::stats).unwrap_or_default()
    }

    pub fn key_for(&self, prompt: &str) -> String {
        cache_key(&self.config.model_name, self.config.temperature, self.config.max_output_tokens, prompt)
    }

    pub fn complete(&self, prompt: &str) -> Result<CompletionRecord, GatewayError> {
        if prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let key = self.key_for(prompt);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let record = self.fetch(prompt, &key)?;
        if let Some(cache) = &self.cache {
            cache.put(&record)?;
        }
        Ok(record)
    }

    /// Completes every prompt with at most `max_concurrency` requests in
    /// flight. Results keep input order.
    pub fn complete_batch(&self, prompts: &[String]) -> Vec<Result<CompletionRecord, GatewayError>> {
        let workers = self.config.max_concurrency.min(prompts.len()).max(1);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<CompletionRecord, GatewayError>>> = (0..prompts.len()).map(|_| None).collect();
        let done = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.complete(&prompts[i]);
                    done.lock().expect("batch results")[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    fn build_request(&self, prompt: &str) -> Result<HttpRequest, GatewayError> {
        let mut headers = Vec::new();
        if let Some(k) = self.config.api_key()? {
            headers.push(("Authorization".to_string(), format!("Bearer {k}")));
        }
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        });
        Ok(HttpRequest {
            url: self.config.completions_url().unwrap_or_else(|| "mock://".into()),
            headers,
            body: body.to_string(),
            timeout: self.config.timeout(),
        })
    }

    fn fetch(&self, prompt: &str, key: &str) -> Result<CompletionRecord, GatewayError> {
        let request = self.build_request(prompt)?;
        let delays = backoff_schedule(
            self.config.backoff_base_ms,
            self.config.backoff_max_ms,
            self.config.max_retries,
            seed_from_key(key),
        );
        let mut attempts = 0u32;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            attempts += 1;
            let start = Instant::now();
            let outcome = self.transport.send(&request);
            let latency_ms = start.elapsed().as_millis() as u64;
            let retry_reason = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return parse_body(&resp.body).map(|(text, pt, ct)| CompletionRecord {
                        cache_key: key.to_string(),
                        model: self.config.model_name.clone(),
                        prompt: prompt.to_string(),
                        response_text: text,
                        latency_ms,
                        prompt_tokens: pt,
                        completion_tokens: ct,
                        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                        from_cache: false,
                    });
                }
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    return Err(GatewayError::Auth { status: resp.status, body: truncate(&resp.body) });
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => Err(resp.status),
                Ok(resp) => return Err(GatewayError::Http { status: resp.status, body: truncate(&resp.body) }),
                Err(TransportError::Timeout) => Ok(()),
                Err(TransportError::Io(m)) => return Err(GatewayError::Transport(m)),
            };
            let Some(delay) = delays.get(attempts as usize - 1) else {
                return Err(match retry_reason {
                    Ok(()) => GatewayError::Timeout { attempts },
                    Err(status) => GatewayError::RetriesExhausted { attempts, last_status: status },
                });
            };
            (self.sleeper)(*delay);
        }
    }
}

fn truncate(body: &str) -> String {
    body.chars().take(300).collect()
}

fn parse_body(body: &str) -> Result<(String, Option<u64>, Option<u64>), GatewayError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::MalformedResponse("no choices[0].message.content".into()))?;
    let (pt, ct) = parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)).unwrap_or((None, None));
    Ok((text, pt, ct))
}
