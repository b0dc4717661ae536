use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, FinishReason};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("script line {line}: {message}")]
    Line { line: usize, message: String },
}

/// One line of a scripted-backend JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRecord {
    pub prompt: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
}

/// Deterministic table-driven backend: exact prompt match, optional fallback.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    table: HashMap<String, CompletionResponse>,
    fallback: Option<CompletionResponse>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(mut self, fallback: CompletionResponse) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: CompletionResponse) {
        self.table.insert(prompt.into(), response);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn from_records<I: IntoIterator<Item = ScriptRecord>>(records: I) -> Self {
        let mut backend = Self::new();
        for r in records {
            backend.insert(r.prompt, record_response(r.text, r.logprobs, r.finish_reason));
        }
        backend
    }

    /// Parses JSONL text. Blank lines are skipped; a prompt listed twice is an error.
    pub fn parse_jsonl(text: &str) -> Result<Self, ScriptError> {
        Self::read(text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    fn read<R: BufRead>(reader: R) -> Result<Self, ScriptError> {
        let mut backend = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let number = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: ScriptRecord =
                serde_json::from_str(&line).map_err(|e| ScriptError::Line {
                    line: number,
                    message: e.to_string(),
                })?;
            if backend.table.contains_key(&record.prompt) {
                return Err(ScriptError::Line {
                    line: number,
                    message: "duplicate prompt".into(),
                });
            }
            backend.insert(
                record.prompt,
                record_response(record.text, record.logprobs, record.finish_reason),
            );
        }
        Ok(backend)
    }
}

fn record_response(
    text: String,
    logprobs: Option<BTreeMap<String, f64>>,
    finish_reason: Option<FinishReason>,
) -> CompletionResponse {
    CompletionResponse {
        text,
        finish_reason: finish_reason.unwrap_or(FinishReason::Stop),
        first_token_logprobs: logprobs,
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let mut response = self
            .table
            .get(&request.prompt)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::UnknownPrompt(request.prompt.clone()))?;
        if !request.want_logprobs {
            response.first_token_logprobs = None;
        }
        Ok(response.truncated(&request.stop_sequences))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            max_new_tokens: 3,
            stop_sequences: vec!["\n".into()],
            temperature: 0.0,
            want_logprobs: false,
            echo: false,
        }
    }

    #[test]
    fn exact_lookup() {
        let mut b = ScriptedBackend::new();
        b.insert("a -> b\nc ->", CompletionResponse::stop(" d"));
        assert_eq!(b.complete(&request("a -> b\nc ->")).unwrap().text, " d");
        assert!(matches!(
            b.complete(&request("a -> b\nc -> ")),
            Err(BackendError::UnknownPrompt(_))
        ));
    }

    #[test]
    fn truncates_at_stop() {
        let mut b = ScriptedBackend::new();
        b.insert("p", CompletionResponse::stop(" 12:30\nextra"));
        let r = b.complete(&request("p")).unwrap();
        assert_eq!(r.text, " 12:30");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn fallback() {
        let b = ScriptedBackend::new().with_fallback(CompletionResponse::stop(" None"));
        assert_eq!(b.complete(&request("anything")).unwrap().text, " None");
    }

    #[test]
    fn logprobs_only_when_requested() {
        let mut b = ScriptedBackend::new();
        b.insert("p", CompletionResponse::stop(" true").with_logprobs([(" true", -0.1)]));
        assert!(b.complete(&request("p")).unwrap().first_token_logprobs.is_none());
        let mut r = request("p");
        r.want_logprobs = true;
        assert_eq!(
            b.complete(&r).unwrap().first_token_logprobs.unwrap()[" true"],
            -0.1
        );
    }

    #[test]
    fn batch_positional_errors() {
        let mut b = ScriptedBackend::new();
        b.insert("known", CompletionResponse::stop(" x"));
        let out = b.complete_batch(&[request("known"), request("unknown")]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].as_ref().unwrap().text, " x");
        assert!(out[1].is_err());
        assert!(b.complete_batch(&[]).is_empty());
    }

    #[test]
    fn parses_jsonl() {
        let b = ScriptedBackend::parse_jsonl(
            "{\"prompt\":\"a\",\"text\":\" b\"}\n\n{\"prompt\":\"c\",\"text\":\" true\",\"logprobs\":{\" true\":-0.2}}\n",
        )
        .unwrap();
        assert_eq!(b.len(), 2);
        let err = ScriptedBackend::parse_jsonl("{\"prompt\":\"a\",\"text\":\"b\"}\n{\"prompt\":\"a\",\"text\":\"c\"}")
            .unwrap_err();
        assert!(matches!(err, ScriptError::Line { line: 2, .. }));
        let err = ScriptedBackend::parse_jsonl("{\"prompt\":1}").unwrap_err();
        assert!(matches!(err, ScriptError::Line { line: 1, .. }));
    }
}
