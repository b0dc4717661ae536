use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::prefix::{TokenCounter, WordCountEstimator};

pub const DEFAULT_MAX_CONCURRENCY: usize = 8;

/// Exponential backoff for [`BackendError::Unavailable`] failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): 0.5s, 1s, 2s by default.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.initial_delay * 2u32.saturating_pow(attempt)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Client for the `/v1/complete` + `/v1/count_tokens` JSON protocol.
pub struct HttpBackend {
    base_url: String,
    client: Client,
    retry: RetryPolicy,
    max_concurrency: usize,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Result<Self, BackendError> {
        Self::with_options(base_url, RetryPolicy::default(), DEFAULT_MAX_CONCURRENCY)
    }

    pub fn with_options(
        base_url: impl Into<String>,
        retry: RetryPolicy,
        max_concurrency: usize,
    ) -> Result<Self, BackendError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(BackendError::InvalidRequest(format!(
                "backend url must be http(s): {base_url}"
            )));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let max_concurrency = max_concurrency.max(1);
        Ok(Self {
            base_url,
            client,
            retry,
            max_concurrency,
            in_flight: Semaphore::new(max_concurrency),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retriable() && attempt < self.retry.max_retries => {
                    let delay = self.retry.delay(attempt);
                    log::warn!("{e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let _permit = self.in_flight.acquire();
        let response = self
            .client
            .post(format!("{}/v1/complete", self.base_url))
            .json(request)
            .send()
            .map_err(transport_error)?;
        let status = response.status();
        let body = response.text().map_err(transport_error)?;
        check_status(status, &body)?;
        serde_json::from_str::<CompletionResponse>(&body)
            .map_err(|e| BackendError::Protocol(format!("bad completion body: {e}")))
    }

    /// One completion with retries, exactly as the server returned it.
    pub fn complete_raw(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        self.with_retries(|| self.post_once(request))
    }

    /// Exact token count from the server tokenizer.
    pub fn count_tokens(&self, text: &str) -> Result<usize, BackendError> {
        #[derive(Deserialize)]
        struct Count {
            count: usize,
        }
        self.with_retries(|| {
            let _permit = self.in_flight.acquire();
            let response = self
                .client
                .get(format!("{}/v1/count_tokens", self.base_url))
                .query(&[("text", text)])
                .send()
                .map_err(transport_error)?;
            let status = response.status();
            let body = response.text().map_err(transport_error)?;
            check_status(status, &body)?;
            serde_json::from_str::<Count>(&body)
                .map(|c| c.count)
                .map_err(|e| BackendError::Protocol(format!("bad count body: {e}")))
        })
    }
}

fn transport_error(e: reqwest::Error) -> BackendError {
    BackendError::Unavailable(e.to_string())
}

fn check_status(status: StatusCode, body: &str) -> Result<(), BackendError> {
    if status.is_success() {
        return Ok(());
    }
    let detail = format!("{status}: {}", body.chars().take(200).collect::<String>());
    Err(match status {
        StatusCode::PAYLOAD_TOO_LARGE => BackendError::ContextOverflow(detail),
        StatusCode::TOO_MANY_REQUESTS | StatusCode::REQUEST_TIMEOUT => {
            BackendError::Unavailable(detail)
        }
        s if s.is_server_error() => BackendError::Unavailable(detail),
        _ => BackendError::Protocol(detail),
    })
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let response = self.complete_raw(request)?;
        // The server is supposed to truncate already; enforce it locally.
        Ok(response.truncated(&request.stop_sequences))
    }

    /// Runs up to `max_concurrency` requests at once.
    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        if requests.len() <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let workers = self.max_concurrency.min(requests.len());
        let mut slots: Vec<Option<Result<CompletionResponse, BackendError>>> =
            vec![None; requests.len()];
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= requests.len() {
                                break;
                            }
                            done.push((i, self.complete(&requests[i])));
                        }
                        done
                    })
                })
                .collect();
            for handle in handles {
                for (i, result) in handle.join().expect("completion worker panicked") {
                    slots[i] = Some(result);
                }
            }
        });
        slots
            .into_iter()
            .map(|r| r.expect("every request was dispatched"))
            .collect()
    }

    fn probe(&self) -> Result<(), BackendError> {
        self.count_tokens("").map(|_| ())
    }

    fn name(&self) -> &str {
        &self.base_url
    }
}

/// [`TokenCounter`] backed by the server tokenizer. Results are cached; if
/// the server cannot be reached the conservative word estimate is used.
pub struct HttpTokenCounter<'a> {
    backend: &'a HttpBackend,
    cache: Mutex<HashMap<String, usize>>,
}

impl<'a> HttpTokenCounter<'a> {
    pub fn new(backend: &'a HttpBackend) -> Self {
        Self {
            backend,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl TokenCounter for HttpTokenCounter<'_> {
    fn count(&self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        if let Some(&n) = self.cache.lock().expect("count cache poisoned").get(text) {
            return n;
        }
        match self.backend.count_tokens(text) {
            Ok(n) => {
                self.cache
                    .lock()
                    .expect("count cache poisoned")
                    .insert(text.to_string(), n);
                n
            }
            Err(e) => {
                log::warn!("token count failed ({e}); using word estimate");
                WordCountEstimator.count(text)
            }
        }
    }
}
