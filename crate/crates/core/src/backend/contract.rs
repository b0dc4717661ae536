//! Conformance checks for servers speaking the completion protocol.
//!
//! Run them against a live server with [`check_server`]; each check reports
//! its own result so a single failure does not hide the others.

use super::{Backend, BackendError, CompletionRequest, HttpBackend};

/// Longer than any supported context window.
const OVERSIZE_WORDS: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn request(prompt: &str, want_logprobs: bool) -> CompletionRequest {
    CompletionRequest {
        prompt: prompt.to_string(),
        max_new_tokens: 3,
        stop_sequences: vec!["\n".into()],
        temperature: 0.0,
        want_logprobs,
        echo: false,
    }
}

fn empty_count(b: &HttpBackend) -> Result<(), String> {
    match b.count_tokens("") {
        Ok(0) => Ok(()),
        Ok(n) => Err(format!("count_tokens(\"\") returned {n}")),
        Err(e) => Err(e.to_string()),
    }
}

fn count_monotone(b: &HttpBackend) -> Result<(), String> {
    let short = b.count_tokens("hello").map_err(|e| e.to_string())?;
    let long = b.count_tokens("hello hello hello").map_err(|e| e.to_string())?;
    if short >= 1 && long > short {
        Ok(())
    } else {
        Err(format!("counts {short} and {long} are not increasing"))
    }
}

fn stop_respected(b: &HttpBackend) -> Result<(), String> {
    let r = b
        .complete_raw(&request("play a song -> playmusic =", false))
        .map_err(|e| e.to_string())?;
    if r.text.contains('\n') {
        Err(format!("continuation {:?} contains the stop sequence", r.text))
    } else {
        Ok(())
    }
}

fn greedy_deterministic(b: &HttpBackend) -> Result<(), String> {
    let req = request("add to playlist kojak -> name =", true);
    let first = b.complete(&req).map_err(|e| e.to_string())?;
    let second = b.complete(&req).map_err(|e| e.to_string())?;
    if first == second {
        Ok(())
    } else {
        Err(format!("{first:?} != {second:?}"))
    }
}

fn logprobs_when_asked(b: &HttpBackend) -> Result<(), String> {
    let r = b
        .complete(&request("rate this book -> ratebook =", true))
        .map_err(|e| e.to_string())?;
    match r.first_token_logprobs {
        Some(lp) if !lp.is_empty() && lp.values().all(|v| *v <= 0.0) => Ok(()),
        Some(lp) => Err(format!("bad logprobs {lp:?}")),
        None => Err("no first_token_logprobs despite want_logprobs".into()),
    }
}

fn oversize_rejected(b: &HttpBackend) -> Result<(), String> {
    let prompt = vec!["word"; OVERSIZE_WORDS].join(" ");
    match b.complete(&request(&prompt, false)) {
        Err(BackendError::ContextOverflow(_)) => Ok(()),
        Ok(_) => Err("oversize prompt was accepted".into()),
        Err(e) => Err(format!("expected a context overflow, got {e}")),
    }
}

/// Runs every check against `backend`.
pub fn check_server(backend: &HttpBackend) -> Vec<CheckResult> {
    type Check = fn(&HttpBackend) -> Result<(), String>;
    let checks: [(&'static str, Check); 6] = [
        ("empty_count", empty_count),
        ("count_monotone", count_monotone),
        ("stop_respected", stop_respected),
        ("greedy_deterministic", greedy_deterministic),
        ("logprobs_when_asked", logprobs_when_asked),
        ("oversize_rejected", oversize_rejected),
    ];
    checks
        .into_iter()
        .map(|(name, check)| CheckResult {
            name,
            outcome: check(backend),
        })
        .collect()
}
