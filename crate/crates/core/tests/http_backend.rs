//! The HTTP client against an in-process mock server.
//!
//! Mock behaviour is driven by the prompt:
//! * `status:CODE[:N] ...` fails with CODE (the first N calls only, if given)
//! * `raw:...` ignores stop sequences
//! * `echo:X` answers `" X"`
//! * `garbage` returns a body that is not JSON
//! * more than 1024 words is rejected with 413

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use tod_priming::backend::contract::check_server;
use tod_priming::backend::{
    Backend, BackendError, CompletionRequest, HttpBackend, HttpTokenCounter, RetryPolicy,
};
use tod_priming::data::{parse_records, TaskDataset};
use tod_priming::experiment::{run_loaded, ExperimentConfig};
use tod_priming::model::TaskKind;

const CONTEXT: usize = 1024;

#[derive(Default)]
struct Mock {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: Mutex<HashMap<String, usize>>,
    delay_ms: u64,
}

impl Mock {
    fn calls(&self, prompt: &str) -> usize {
        self.calls.lock().unwrap().get(prompt).copied().unwrap_or(0)
    }
}

fn words(text: &str) -> usize {
    text.split_whitespace().count()
}

async fn count_tokens(Query(q): Query<HashMap<String, String>>) -> Json<Value> {
    Json(json!({"count": words(q.get("text").map(String::as_str).unwrap_or(""))}))
}

async fn complete(State(mock): State<Arc<Mock>>, body: String) -> (StatusCode, String) {
    let Ok(req) = serde_json::from_str::<CompletionRequest>(&body) else {
        return (StatusCode::BAD_REQUEST, "malformed json".into());
    };
    let call = {
        let mut calls = mock.calls.lock().unwrap();
        let n = calls.entry(req.prompt.clone()).or_insert(0);
        *n += 1;
        *n
    };
    let now = mock.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    mock.max_in_flight.fetch_max(now, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(mock.delay_ms)).await;
    mock.in_flight.fetch_sub(1, Ordering::SeqCst);

    if words(&req.prompt) > CONTEXT {
        return (StatusCode::PAYLOAD_TOO_LARGE, "prompt too long".into());
    }
    if let Some(rest) = req.prompt.strip_prefix("status:") {
        let spec = rest.split_whitespace().next().unwrap_or_default();
        let mut parts = spec.split(':');
        let code: u16 = parts.next().unwrap().parse().unwrap();
        let times: Option<usize> = parts.next().map(|n| n.parse().unwrap());
        if times.is_none_or(|t| call <= t) {
            return (StatusCode::from_u16(code).unwrap(), "scripted failure".into());
        }
    }
    if req.prompt == "garbage" {
        return (StatusCode::OK, "<html>".into());
    }
    let mut text = if let Some(x) = req.prompt.strip_prefix("echo:") {
        format!(" {x}")
    } else if words(&req.prompt).is_multiple_of(2) {
        " true\nnext line".to_string()
    } else {
        " false\nnext line".to_string()
    };
    if !req.prompt.starts_with("raw:") {
        for stop in &req.stop_sequences {
            if let Some(i) = text.find(stop.as_str()) {
                text.truncate(i);
            }
        }
    }
    let mut body = json!({"text": text, "finish_reason": "stop"});
    if req.want_logprobs {
        body["first_token_logprobs"] = json!({" true": -0.2, " false": -1.8});
    }
    (StatusCode::OK, body.to_string())
}

fn spawn(mock: Arc<Mock>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/complete", post(complete))
                .route("/v1/count_tokens", get(count_tokens))
                .with_state(mock);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_delay: Duration::from_millis(5),
    }
}

fn req(prompt: &str) -> CompletionRequest {
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
fn contract_suite_passes() {
    let url = spawn(Arc::new(Mock::default()));
    let backend = HttpBackend::with_options(url, fast_retry(), 4).unwrap();
    for check in check_server(&backend) {
        assert_eq!(check.outcome, Ok(()), "{}", check.name);
    }
}

#[test]
fn retries_transient_failures() {
    let mock = Arc::new(Mock::default());
    let backend = HttpBackend::with_options(spawn(mock.clone()), fast_retry(), 4).unwrap();

    let ok = backend.complete(&req("status:503:2 a b")).unwrap();
    assert_eq!(ok.text, " false");
    assert_eq!(mock.calls("status:503:2 a b"), 3);

    assert!(backend.complete(&req("status:429:1 a b")).is_ok());
    assert_eq!(mock.calls("status:429:1 a b"), 2);

    let err = backend.complete(&req("status:500 a")).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)));
    assert_eq!(mock.calls("status:500 a"), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = Arc::new(Mock::default());
    let backend = HttpBackend::with_options(spawn(mock.clone()), fast_retry(), 4).unwrap();

    let long = vec!["w"; CONTEXT + 1].join(" ");
    assert!(matches!(backend.complete(&req(&long)), Err(BackendError::ContextOverflow(_))));
    assert_eq!(mock.calls(&long), 1);

    assert!(matches!(backend.complete(&req("status:400 x")), Err(BackendError::Protocol(_))));
    assert_eq!(mock.calls("status:400 x"), 1);

    assert!(matches!(backend.complete(&req("garbage")), Err(BackendError::Protocol(_))));

    let mut bad = req("x");
    bad.max_new_tokens = 0;
    assert!(matches!(backend.complete(&bad), Err(BackendError::InvalidRequest(_))));
    assert_eq!(mock.calls("x"), 0);
}

#[test]
fn stop_sequences_enforced_client_side() {
    let backend = HttpBackend::with_options(spawn(Arc::new(Mock::default())), fast_retry(), 4).unwrap();
    assert_eq!(backend.complete_raw(&req("raw: a")).unwrap().text, " true\nnext line");
    assert_eq!(backend.complete(&req("raw: a")).unwrap().text, " true");
}

#[test]
fn batches_respect_the_concurrency_bound() {
    let mock = Arc::new(Mock {
        delay_ms: 30,
        ..Mock::default()
    });
    let backend = HttpBackend::with_options(spawn(mock.clone()), fast_retry(), 4).unwrap();
    let requests: Vec<_> = (0..24).map(|i| req(&format!("echo:{i}"))).collect();
    let responses = backend.complete_batch(&requests);
    for (i, r) in responses.into_iter().enumerate() {
        assert_eq!(r.unwrap().text, format!(" {i}"));
    }
    let peak = mock.max_in_flight.load(Ordering::SeqCst);
    assert!(peak <= 4, "peak {peak}");
    assert!(peak >= 2, "requests were not concurrent (peak {peak})");
}

#[test]
fn unreachable_server() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let backend = HttpBackend::with_options(
        url,
        RetryPolicy {
            max_retries: 1,
            initial_delay: Duration::from_millis(1),
        },
        2,
    )
    .unwrap();
    assert!(matches!(backend.probe(), Err(BackendError::Unavailable(_))));
    assert!(HttpBackend::new("localhost:80").is_err());
}

#[test]
fn token_counter_uses_the_server() {
    use tod_priming::prefix::TokenCounter;
    let backend = HttpBackend::with_options(spawn(Arc::new(Mock::default())), fast_retry(), 2).unwrap();
    let counter = HttpTokenCounter::new(&backend);
    assert_eq!(counter.count("one two three"), 3);
    assert_eq!(counter.count(""), 0);
}

#[test]
fn experiment_over_http_is_deterministic() {
    let mock = Arc::new(Mock {
        delay_ms: 2,
        ..Mock::default()
    });
    let backend = HttpBackend::with_options(spawn(mock), fast_retry(), 8).unwrap();
    let counter = HttpTokenCounter::new(&backend);
    let mut train = String::new();
    let mut test = String::new();
    for i in 0..16 {
        let intent = ["play", "book"][i % 2];
        let line = format!("{{\"id\":\"{i}\",\"text\":\"{intent} item {i} now\",\"intent\":\"{intent}\"}}\n");
        if i < 12 { &mut train } else { &mut test }.push_str(&line);
    }
    let ds = TaskDataset::new(
        TaskKind::Intent,
        parse_records(TaskKind::Intent, &train).unwrap(),
        parse_records(TaskKind::Intent, &test).unwrap(),
    )
    .unwrap();
    let datasets: BTreeMap<_, _> = [("snips".to_string(), ds)].into();
    let config = ExperimentConfig::from_json(
        r#"{"task":"intent","datasets":{"snips":{"train":"-","test":"-"}},"shots":[2],"seeds":[1,2]}"#,
    )
    .unwrap();
    let first = run_loaded(&config, &datasets, &backend, &counter).unwrap();
    let second = run_loaded(&config, &datasets, &backend, &counter).unwrap();
    assert_eq!(first.files, second.files);
    assert!(first.reports.iter().all(|r| r.errors == 0));
}
