//! Blocking JSON-over-HTTP client shared by the chat and embedding backends:
//! exponential backoff on transient failures and a requests-per-minute budget.
//!
//! All waiting goes through a [`Clock`], so tests can drive the limiter and
//! the backoff schedule with a [`MockClock`] instead of real sleeps.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    /// Blocks until `now() >= deadline`.
    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        let now = self.now();
        self.sleep_until(now + d);
    }
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// A clock that never blocks: sleeping moves time forward instantly.
#[derive(Debug, Default)]
pub struct MockClock {
    now: Mutex<Duration>,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        if deadline > *now {
            *now = deadline;
        }
    }
}

/// Requests-per-minute budget over a sliding 60 s window: no window ever
/// holds more than `rpm` granted requests. Each caller reserves its slot
/// under the lock and then waits outside it.
pub struct RateLimiter {
    rpm: usize,
    window: Duration,
    granted: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        let rpm = requests_per_minute.max(1) as usize;
        RateLimiter {
            rpm,
            window: Duration::from_secs(60),
            granted: Mutex::new(VecDeque::with_capacity(rpm)),
            clock,
        }
    }

    /// Waits for a slot and returns the clock time at which it was granted.
    pub fn acquire(&self) -> Duration {
        let slot = {
            let mut granted = self.granted.lock().unwrap();
            let mut slot = self.clock.now();
            if let Some(&last) = granted.back() {
                slot = slot.max(last);
            }
            if granted.len() == self.rpm {
                slot = slot.max(granted[0] + self.window);
                granted.pop_front();
            }
            granted.push_back(slot);
            slot
        };
        self.clock.sleep_until(slot);
        slot
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base * 2^retry`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("authentication failed with status {status}: {body}")]
    Auth { status: u16, body: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid url `{0}`")]
    InvalidUrl(String),
}

#[derive(Debug)]
pub struct JsonResponse {
    pub body: Value,
    pub attempts: u32,
}

enum Attempt {
    Done(Value),
    Transient(String),
    Fatal(HttpError),
}

pub struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    clock: Arc<dyn Clock>,
}

impl JsonClient {
    pub fn new(timeout: Duration, retry: RetryPolicy, limiter: Option<Arc<RateLimiter>>, clock: Arc<dyn Clock>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        JsonClient {
            agent,
            retry,
            limiter,
            clock,
        }
    }

    pub fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<JsonResponse, HttpError> {
        self.run(url, |agent| {
            let mut req = agent.post(url);
            for (k, v) in headers {
                req = req.header(k.as_str(), v.as_str());
            }
            req.send_json(body)
        })
    }

    pub fn get_json(&self, url: &str) -> Result<JsonResponse, HttpError> {
        self.run(url, |agent| agent.get(url).call())
    }

    fn run<F>(&self, url: &str, send: F) -> Result<JsonResponse, HttpError>
    where
        F: Fn(&ureq::Agent) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(HttpError::InvalidUrl(url.to_string()));
        }
        let mut attempts = 0;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            attempts += 1;
            let last = match self.attempt(&send) {
                Attempt::Done(body) => return Ok(JsonResponse { body, attempts }),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => msg,
            };
            let retry = attempts - 1;
            if retry >= self.retry.max_retries {
                return Err(HttpError::RetriesExhausted { attempts, last });
            }
            tracing::warn!(url, attempt = attempts, error = %last, "transient failure, backing off");
            self.clock.sleep(self.retry.delay(retry));
        }
    }

    fn attempt<F>(&self, send: &F) -> Attempt
    where
        F: Fn(&ureq::Agent) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let resp = match send(&self.agent) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Attempt::Transient(e.to_string())
            }
            Err(ureq::Error::BadUri(u)) => return Attempt::Fatal(HttpError::InvalidUrl(u)),
            Err(e) => return Attempt::Fatal(HttpError::Malformed(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(HttpError::Malformed(format!("invalid JSON body: {e}"))),
            },
            401 | 403 => Attempt::Fatal(HttpError::Auth { status, body: text }),
            408 | 429 | 500..=599 => Attempt::Transient(format!("status {status}: {text}")),
            _ => Attempt::Fatal(HttpError::Rejected { status, body: text }),
        }
    }
}

/// Joins a base URL and a path without doubling or dropping the slash.
pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
