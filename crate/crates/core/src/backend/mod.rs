//! Completion backends: a wire-level request/response pair, the [`Backend`]
//! trait, a table-driven scripted backend and an HTTP client.

pub mod contract;
mod http;
mod scripted;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefix::PrimedPrompt;

pub use http::{HttpBackend, HttpTokenCounter, RetryPolicy, DEFAULT_MAX_CONCURRENCY};
pub use scripted::{ScriptError, ScriptRecord, ScriptedBackend};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Network or process failure; worth retrying.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted completion for prompt {0:?}")]
    UnknownPrompt(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub temperature: f64,
    pub want_logprobs: bool,
    #[serde(default)]
    pub echo: bool,
}

impl CompletionRequest {
    /// Greedy request for a primed prompt.
    pub fn greedy(prompt: &PrimedPrompt, want_logprobs: bool) -> Self {
        Self {
            prompt: prompt.text.clone(),
            max_new_tokens: prompt.max_new_tokens,
            stop_sequences: prompt.stop_sequences.clone(),
            temperature: 0.0,
            want_logprobs,
            echo: false,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    /// Top alternatives at the first generated position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_logprobs: Option<BTreeMap<String, f64>>,
}

impl CompletionResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            first_token_logprobs: None,
        }
    }

    pub fn with_logprobs<I, S>(mut self, logprobs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        self.first_token_logprobs = Some(logprobs.into_iter().map(|(k, v)| (k.into(), v)).collect());
        self
    }

    /// Cuts `text` at the earliest stop sequence, if any.
    pub fn truncated(mut self, stops: &[String]) -> Self {
        if let Some(cut) = stop_position(&self.text, stops) {
            self.text.truncate(cut);
            self.finish_reason = FinishReason::Stop;
        }
        self
    }
}

/// Byte position of the earliest occurrence of any non-empty stop sequence.
pub fn stop_position(text: &str, stops: &[String]) -> Option<usize> {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
}

/// A language model that turns prompts into continuations.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Positionally aligned with `requests`; one failure does not abort the
    /// rest. The default runs requests one after another.
    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }

    /// Cheap reachability check run before an experiment starts.
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        (**self).complete_batch(requests)
    }

    fn probe(&self) -> Result<(), BackendError> {
        (**self).probe()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        (**self).complete_batch(requests)
    }

    fn probe(&self) -> Result<(), BackendError> {
        (**self).probe()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Wraps a backend and counts the requests that pass through it.
pub struct CountingBackend<B> {
    inner: B,
    requests: AtomicUsize,
    batches: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            requests: AtomicUsize::new(0),
            batches: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }

    pub fn reset(&self) {
        self.requests.store(0, Ordering::SeqCst);
        self.batches.store(0, Ordering::SeqCst);
        self.prompts.lock().expect("prompt log poisoned").clear();
    }

    pub fn into_inner(self) -> B {
        self.inner
    }

    fn record(&self, requests: &[CompletionRequest]) {
        self.requests.fetch_add(requests.len(), Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .extend(requests.iter().map(|r| r.prompt.clone()));
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.record(std::slice::from_ref(request));
        self.inner.complete(request)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.record(requests);
        self.inner.complete_batch(requests)
    }

    fn probe(&self) -> Result<(), BackendError> {
        self.inner.probe()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_truncation() {
        let r = CompletionResponse {
            text: " 12:30\nextra".into(),
            finish_reason: FinishReason::Length,
            first_token_logprobs: None,
        }
        .truncated(&["\n".into()]);
        assert_eq!(r.text, " 12:30");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn earliest_stop_wins() {
        assert_eq!(stop_position("ab.cd\nef", &["\n".into(), ".".into()]), Some(2));
        assert_eq!(stop_position("abc", &["".into()]), None);
    }

    #[test]
    fn request_validation() {
        let mut r = CompletionRequest {
            prompt: "p".into(),
            max_new_tokens: 0,
            stop_sequences: vec![],
            temperature: 0.0,
            want_logprobs: false,
            echo: false,
        };
        assert!(r.validate().is_err());
        r.max_new_tokens = 1;
        assert!(r.validate().is_ok());
        r.temperature = -1.0;
        assert!(r.validate().is_err());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn wire_format_is_snake_case() {
        let r = CompletionRequest {
            prompt: "a -> b\nc ->".into(),
            max_new_tokens: 3,
            stop_sequences: vec!["\n".into()],
            temperature: 0.0,
            want_logprobs: true,
            echo: false,
        };
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "prompt": "a -> b\nc ->",
                "max_new_tokens": 3,
                "stop_sequences": ["\n"],
                "temperature": 0.0,
                "want_logprobs": true,
                "echo": false
            })
        );
        let resp: CompletionResponse = serde_json::from_str(
            r#"{"text":" d","finish_reason":"stop","first_token_logprobs":{" d":-0.5}}"#,
        )
        .unwrap();
        assert_eq!(resp.finish_reason, FinishReason::Stop);
        assert_eq!(resp.first_token_logprobs.unwrap()[" d"], -0.5);
    }
}
