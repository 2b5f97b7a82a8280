//! Token-bucket rate limiter shared by all workers of a client.

use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// `rate` tokens per second, bursting up to `capacity`.
    pub fn new(rate: f64, capacity: f64) -> Self {
        assert!(rate > 0.0 && capacity >= 1.0, "rate must be positive and capacity at least 1");
        RateLimiter { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes one token, or returns how long until one is available.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut s = self.state.lock().expect("limiter lock");
        let now = Instant::now();
        let (tokens, last) = *s;
        let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
        if refilled >= 1.0 {
            *s = (refilled - 1.0, now);
            Ok(())
        } else {
            *s = (refilled, now);
            Err(Duration::from_secs_f64((1.0 - refilled) / self.rate))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}
