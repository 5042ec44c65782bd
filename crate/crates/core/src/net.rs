//! Small blocking-HTTP helpers shared by the Overpass and completion clients:
//! retry with exponential backoff, a token-bucket rate limiter and an
//! in-flight request cap.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// What a single attempt produced.
pub enum Attempt<T, E> {
    Done(T),
    /// Transient failure, worth retrying.
    Retry(E),
    /// Permanent failure.
    Fail(E),
}

#[derive(Debug)]
pub enum RetryError<E> {
    Exhausted { attempts: u32, last: E },
    Fatal(E),
}

/// Runs `f` until it succeeds, fails permanently, or the policy runs out.
pub fn with_retries<T, E>(policy: &RetryPolicy, mut f: impl FnMut(u32) -> Attempt<T, E>) -> Result<T, RetryError<E>> {
    let mut attempt = 0;
    loop {
        match f(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fail(e) => return Err(RetryError::Fatal(e)),
            Attempt::Retry(e) => {
                if attempt >= policy.max_retries {
                    return Err(RetryError::Exhausted { attempts: attempt + 1, last: e });
                }
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
        }
    }
}

/// Blocking token bucket.
pub struct TokenBucket {
    rate_per_s: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_s: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        Self { rate_per_s, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes one token, sleeping until one is available. A non-positive rate
    /// disables limiting.
    pub fn acquire(&self) {
        if self.rate_per_s <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate_per_s;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate_per_s)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Caps the number of concurrent holders.
pub struct InFlightLimit {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.max {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit { limit: self }
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.limit.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.limit.freed.notify_one();
    }
}
