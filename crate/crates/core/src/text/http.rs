//! Shared HTTP plumbing: agent construction and bounded retry.

use std::time::Duration;

use ureq::Agent;

pub fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Outcome of one attempt.
pub enum Attempt<T> {
    Done(T),
    /// Worth retrying (network error, 429, 5xx).
    Retry(String),
    Fatal(String),
}

/// Runs `f` up to `max_attempts` times with exponential backoff starting at
/// `base`. Returns the last failure reason on exhaustion.
pub fn with_backoff<T>(max_attempts: usize, base: Duration, mut f: impl FnMut(usize) -> Attempt<T>) -> Result<T, String> {
    let mut last = String::from("no attempts made");
    for attempt in 0..max_attempts {
        match f(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => {
                log::debug!("attempt {} failed: {e}", attempt + 1);
                last = e;
                if attempt + 1 < max_attempts {
                    std::thread::sleep(base * 2u32.saturating_pow(attempt as u32));
                }
            }
        }
    }
    Err(format!("{last} (after {max_attempts} attempts)"))
}

pub fn classify_status(status: u16) -> Option<String> {
    match status {
        200..=299 => None,
        _ => Some(format!("HTTP {status}")),
    }
}

pub fn retryable_status(status: u16) -> bool {
    status == 429 || status >= 500
}
