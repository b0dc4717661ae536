//! End-to-end runs: sample pools for every (shots, seed), predict the test
//! split, score it, and lay the results out as Model/Shots tables.

mod oracle;
mod score;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{Backend, HttpBackend, HttpTokenCounter, RetryPolicy, ScriptRecord, ScriptedBackend};
use crate::data::{sample_shots, DataError, Record, ShotPool, TaskDataset};
use crate::metrics::{
    classification_report, conll_f1, corpus_bleu, dst_accuracy, multilabel_f1, names, slot_error_rate,
    spans_from_slot_map, MetricError, ScoreReport,
};
use crate::model::TaskKind;
use crate::prefix::{BudgetPolicy, PrefixKind, PromptStyle, TokenCounter, WordCountEstimator, DEFAULT_CONTEXT_LIMIT};
use crate::runner::{DstTrace, Issue, RunError, Runner};

pub use oracle::OracleBackend;
pub use score::{parse_predictions, score_predictions};
pub use table::{curve_csv, emit_table, tables, Table, TableError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit code: 1 config, 2 backend, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Io { .. } => 1,
            ExperimentError::Backend(_) => 2,
            ExperimentError::Data(_) => 3,
        }
    }
}

impl From<DataError> for ExperimentError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSize(_) => ExperimentError::Config(e.to_string()),
            other => ExperimentError::Data(other.to_string()),
        }
    }
}

impl From<RunError> for ExperimentError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::MissingShots(_) => ExperimentError::Data(e.to_string()),
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

impl From<MetricError> for ExperimentError {
    fn from(e: MetricError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Url(String),
    Scripted(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    /// `scripted:PATH` or an `http(s)://` URL.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("scripted:") {
            if path.is_empty() {
                return Err("scripted backend needs a path".into());
            }
            Ok(BackendSpec::Scripted(path.into()))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Url(s.to_string()))
        } else {
            Err(format!("unrecognized backend {s:?}; use scripted:PATH or an http(s) URL"))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default)]
    pub context_limit: Option<usize>,
    #[serde(default)]
    pub reserve: Option<usize>,
    /// Prompt lines; defaults to `shots * (1 + negatives_per_positive)`, or
    /// `shots` for generation.
    #[serde(default)]
    pub max_shots: Option<usize>,
}

fn default_model() -> String {
    "gpt2".into()
}

fn default_ratio() -> usize {
    1
}

fn default_out() -> PathBuf {
    "results".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default = "default_model")]
    pub model: String,
    /// Domain name to split files.
    pub datasets: BTreeMap<String, DatasetPaths>,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub style: PromptStyle,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default = "default_ratio")]
    pub negatives_per_positive: usize,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default = "default_true")]
    pub want_logprobs: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

pub fn prefix_kind(task: TaskKind) -> PrefixKind {
    match task {
        TaskKind::Intent | TaskKind::Act => PrefixKind::Binary,
        TaskKind::SlotFilling | TaskKind::Dst => PrefixKind::Value,
        TaskKind::Nlg => PrefixKind::Generative,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for paths in config.datasets.values_mut() {
            resolve(&mut paths.train);
            resolve(&mut paths.test);
        }
        if let Some(BackendSpec::Scripted(p)) = &mut config.backend {
            resolve(p);
        }
        resolve(&mut config.out);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.shots.is_empty() {
            return bad("at least one shot count is required".into());
        }
        let cap = self.task.shot_cap();
        if let Some(&k) = self.shots.iter().find(|&&k| k == 0 || k > cap) {
            return bad(format!("shot count {k} outside 1..={cap} for {}", self.task));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        if matches!(self.task, TaskKind::Intent | TaskKind::Act | TaskKind::Dst) && self.datasets.len() != 1 {
            return bad(format!("{} takes exactly one dataset", self.task));
        }
        if self.task != TaskKind::Nlg && self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if self.model.trim().is_empty() || self.model.contains([',', '|', '\n']) {
            return bad(format!("model name {:?} cannot be used in tables", self.model));
        }
        self.style.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        let kind = prefix_kind(self.task);
        for &k in &self.shots {
            self.budget_for(k)
                .validate(kind.default_max_new_tokens())
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Budget for pools of `k` positives.
    pub fn budget_for(&self, k: usize) -> BudgetPolicy {
        let kind = prefix_kind(self.task);
        let lines = match kind {
            PrefixKind::Generative => k,
            _ => k * (1 + self.negatives_per_positive),
        };
        BudgetPolicy::new(
            self.budget.context_limit.unwrap_or(DEFAULT_CONTEXT_LIMIT),
            self.budget.reserve.unwrap_or(kind.default_reserve()),
            self.budget.max_shots.unwrap_or(lines),
        )
    }

    pub fn load_datasets(&self) -> Result<BTreeMap<String, TaskDataset>, ExperimentError> {
        self.datasets
            .iter()
            .map(|(domain, paths)| {
                let ds = TaskDataset::load(self.task, &paths.train, &paths.test)
                    .map_err(|e| ExperimentError::Data(format!("{domain}: {e}")))?;
                Ok((domain.clone(), ds))
            })
            .collect()
    }
}

/// Reports plus every output file, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<ScoreReport>,
    pub files: BTreeMap<String, String>,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExperimentError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(io(&path))?;
        }
        Ok(())
    }
}

struct ItemResult {
    record: Value,
    forwards: usize,
    backend_failures: usize,
    unparseable: usize,
}

impl ItemResult {
    fn new(id: &str, domain: &str, task: TaskKind, gold: Value, predicted: Value, prompts: &[String], issues: &[Issue]) -> Self {
        let mut record = json!({
            "id": id,
            "domain": domain,
            "task": task,
            "gold": gold,
            "predicted": predicted,
            "prompts_hash": crate::runner::prompts_hash(prompts),
        });
        if !issues.is_empty() {
            record["issues"] = json!(issues);
        }
        Self {
            record,
            forwards: prompts.len(),
            backend_failures: issues.iter().filter(|i| i.is_backend_failure()).count(),
            unparseable: issues.iter().filter(|i| matches!(i, Issue::Unparseable { .. })).count(),
        }
    }
}

/// Predicts and scores one domain's test split with one pool.
fn run_one(
    runner: &Runner<'_>,
    domain: &str,
    dataset: &TaskDataset,
    pool: &ShotPool,
    budget: &BudgetPolicy,
) -> Result<(ScoreReport, Vec<ItemResult>), ExperimentError> {
    let task = dataset.kind;
    let labels = &dataset.labels;
    let shots = &pool.per_target;
    let test = &dataset.test;
    let (report, items) = match task {
        TaskKind::Intent => {
            let results = test
                .par_iter()
                .map(|r| {
                    let Record::Nlu(item) = r else { unreachable!("validated kind") };
                    let out = runner.predict_intent(&item.text, labels, shots, budget)?;
                    Ok((item.intent.clone(), out))
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let gold: Vec<String> = results.iter().map(|(g, _)| g.clone()).collect();
            let pred: Vec<String> = results.iter().map(|(_, o)| o.value.predicted.clone()).collect();
            let report = classification_report(&gold, &pred, labels)?;
            let items = test
                .iter()
                .zip(results)
                .map(|(r, (g, o))| ItemResult::new(r.id(), domain, task, json!(g), json!(o.value.predicted), &o.prompts, &o.issues))
                .collect();
            (report, items)
        }
        TaskKind::Act => {
            let results = test
                .par_iter()
                .map(|r| {
                    let Record::Act(item) = r else { unreachable!("validated kind") };
                    let out = runner.predict_acts(&item.system_text, labels, shots, budget)?;
                    Ok((item.acts.clone(), out))
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let gold: Vec<BTreeSet<String>> = results.iter().map(|(g, _)| g.clone()).collect();
            let pred: Vec<BTreeSet<String>> = results.iter().map(|(_, o)| o.value.predicted.clone()).collect();
            let report = multilabel_f1(&gold, &pred, labels)?;
            let items = test
                .iter()
                .zip(results)
                .map(|(r, (g, o))| ItemResult::new(r.id(), domain, task, json!(g), json!(o.value.predicted), &o.prompts, &o.issues))
                .collect();
            (report, items)
        }
        TaskKind::SlotFilling => {
            let results = test
                .par_iter()
                .map(|r| {
                    let Record::Nlu(item) = r else { unreachable!("validated kind") };
                    let out = runner.predict_slots(&item.text, labels, shots, budget)?;
                    Ok((item, out))
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let gold: Vec<_> = results.iter().map(|(i, _)| spans_from_slot_map(&i.text, &i.slots)).collect();
            let pred: Vec<_> = results.iter().map(|(i, o)| spans_from_slot_map(&i.text, &o.value)).collect();
            let report = conll_f1(&gold, &pred)?;
            let items = results
                .into_iter()
                .map(|(i, o)| ItemResult::new(&i.id, domain, task, json!(i.slots), json!(o.value), &o.prompts, &o.issues))
                .collect();
            (report, items)
        }
        TaskKind::Dst => {
            let results = test
                .par_iter()
                .map(|r| {
                    let Record::Dst(d) = r else { unreachable!("validated kind") };
                    let out = runner.track_dialogue(d.dialogue.user_turns(), labels, shots, budget)?;
                    Ok((d, out))
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let gold: Vec<DstTrace> = results.iter().map(|(d, _)| DstTrace(d.states.clone())).collect();
            let pred: Vec<DstTrace> = results.iter().map(|(_, o)| o.value.clone()).collect();
            let report = dst_accuracy(&gold, &pred, labels)?;
            let items = results
                .into_iter()
                .map(|(d, o)| ItemResult::new(d.id(), domain, task, json!(d.states), json!(o.value.0), &o.prompts, &o.issues))
                .collect();
            (report, items)
        }
        TaskKind::Nlg => {
            let results = test
                .par_iter()
                .map(|r| {
                    let Record::Nlg(item) = r else { unreachable!("validated kind") };
                    let out = runner.generate_nlg(&item.act, &pool.generative, budget)?;
                    Ok((item, out))
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let hyps: Vec<String> = results.iter().map(|(_, o)| o.value.clone()).collect();
            let refs: Vec<Vec<String>> = results.iter().map(|(i, _)| vec![i.reference.clone()]).collect();
            let acts: Vec<_> = results.iter().map(|(i, _)| i.act.clone()).collect();
            let mut report = ScoreReport::new(TaskKind::Nlg, results.len()).with(names::BLEU, corpus_bleu(&hyps, &refs)?);
            match slot_error_rate(&acts, &hyps) {
                Ok(slr) => {
                    report.metrics.insert(names::SLR.into(), slr);
                }
                Err(MetricError::NoValueSlots) => {
                    report.notes.insert("slr".into(), "no act carries slot values".into());
                }
                Err(e) => return Err(e.into()),
            }
            let items = results
                .into_iter()
                .map(|(i, o)| ItemResult::new(&i.id, domain, task, json!(i.reference), json!(o.value), &o.prompts, &o.issues))
                .collect();
            (report, items)
        }
    };
    Ok((report, items))
}

/// Runs every (domain, shots, seed) combination against `backend`.
///
/// Nothing is written; the returned files are complete and deterministic for
/// a deterministic backend. A run in which every forward failed at the
/// backend aborts the whole experiment.
pub fn run_loaded(
    config: &ExperimentConfig,
    datasets: &BTreeMap<String, TaskDataset>,
    backend: &dyn Backend,
    counter: &dyn TokenCounter,
) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let runner = Runner::new(backend, counter, config.style.clone()).want_logprobs(config.want_logprobs);
    let mut reports = Vec::new();
    let mut files = BTreeMap::new();
    for &k in &config.shots {
        let budget = config.budget_for(k);
        for &seed in &config.seeds {
            let mut predictions = String::new();
            let mut run_reports = Vec::new();
            for (domain, dataset) in datasets {
                if dataset.kind != config.task {
                    return Err(ExperimentError::Config(format!(
                        "dataset {domain} is {}, config is {}",
                        dataset.kind, config.task
                    )));
                }
                let pool = sample_shots(dataset, k, seed, config.negatives_per_positive)?;
                let test_ids: BTreeSet<&str> = dataset.test.iter().map(Record::id).collect();
                if let Some(leak) = pool.source_ids.iter().find(|id| test_ids.contains(id.as_str())) {
                    return Err(ExperimentError::Data(format!("test item {leak} was drawn as a shot")));
                }
                let (mut report, items) = run_one(&runner, domain, dataset, &pool, &budget)?;
                let forwards: usize = items.iter().map(|i| i.forwards).sum();
                let failures: usize = items.iter().map(|i| i.backend_failures).sum();
                if forwards > 0 && failures == forwards {
                    return Err(ExperimentError::Backend(format!(
                        "every forward failed for {domain} (shots {k}, seed {seed})"
                    )));
                }
                report.model = Some(config.model.clone());
                report.shots = Some(k);
                report.seed = Some(seed);
                report.domain = Some(domain.clone());
                report.errors = failures;
                report.notes.insert("backend".into(), backend.name().to_string());
                report.notes.insert("forwards".into(), forwards.to_string());
                report
                    .notes
                    .insert("unparseable".into(), items.iter().map(|i| i.unparseable).sum::<usize>().to_string());
                report.notes.insert("pool_k".into(), pool.k.to_string());
                if config.task != TaskKind::Nlg {
                    report
                        .notes
                        .insert("negatives_per_positive".into(), config.negatives_per_positive.to_string());
                }
                for item in &items {
                    predictions.push_str(&serde_json::to_string(&item.record).expect("json value"));
                    predictions.push('\n');
                }
                run_reports.push(report);
            }
            files.insert(format!("predictions_{k}_{seed}.jsonl"), predictions);
            let json = serde_json::to_string_pretty(&run_reports).expect("reports serialize");
            files.insert(format!("report_{k}_{seed}.json"), json + "\n");
            reports.extend(run_reports);
        }
    }
    let tabs = tables(&reports, config.task).map_err(|e| ExperimentError::Data(e.to_string()))?;
    let markdown = emit_table(&reports, config.task).map_err(|e| ExperimentError::Data(e.to_string()))?;
    files.insert("table.md".into(), markdown);
    for t in &tabs {
        files.insert(format!("table_{}.csv", t.name), t.to_csv());
    }
    files.insert("curve.csv".into(), curve_csv(&reports));
    Ok(ExperimentOutput { reports, files })
}

fn backend_from_spec(spec: &BackendSpec, max_concurrency: Option<usize>) -> Result<Box<dyn Backend>, ExperimentError> {
    match spec {
        BackendSpec::Scripted(path) => {
            let b = ScriptedBackend::load(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
            Ok(Box::new(b))
        }
        BackendSpec::Url(url) => {
            let b = HttpBackend::with_options(
                url.clone(),
                RetryPolicy::default(),
                max_concurrency.unwrap_or(crate::backend::DEFAULT_MAX_CONCURRENCY),
            )
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
            Ok(Box::new(b))
        }
    }
}

/// Loads data, connects to the configured backend, runs, and writes all
/// outputs into `config.out` only once every run has finished.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let spec = config
        .backend
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no backend configured".into()))?;
    let datasets = config.load_datasets()?;
    let output = match spec {
        BackendSpec::Url(url) => {
            let http = HttpBackend::with_options(
                url.clone(),
                RetryPolicy::default(),
                config.max_concurrency.unwrap_or(crate::backend::DEFAULT_MAX_CONCURRENCY),
            )
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
            http.probe().map_err(|e| ExperimentError::Backend(e.to_string()))?;
            let counter = HttpTokenCounter::new(&http);
            run_loaded(config, &datasets, &http, &counter)?
        }
        BackendSpec::Scripted(_) => {
            let backend = backend_from_spec(spec, config.max_concurrency)?;
            backend.probe().map_err(|e| ExperimentError::Backend(e.to_string()))?;
            run_loaded(config, &datasets, backend.as_ref(), &WordCountEstimator)?
        }
    };
    output.write_to(&config.out)?;
    Ok(output)
}

/// Scripted-backend records holding the gold continuation for every prompt
/// the configured runs will send, built with the word-count estimator.
pub fn gold_script(
    config: &ExperimentConfig,
    datasets: &BTreeMap<String, TaskDataset>,
) -> Result<Vec<ScriptRecord>, ExperimentError> {
    let mut all: BTreeMap<String, ScriptRecord> = BTreeMap::new();
    for (domain, dataset) in datasets {
        let oracle = OracleBackend::for_dataset(dataset, &config.style).map_err(ExperimentError::Data)?;
        let single: BTreeMap<String, TaskDataset> = [(domain.clone(), dataset.clone())].into();
        let mut one = config.clone();
        one.datasets.retain(|d, _| d == domain);
        run_loaded(&one, &single, &oracle, &WordCountEstimator)?;
        for r in oracle.records() {
            all.insert(r.prompt.clone(), r);
        }
    }
    Ok(all.into_values().collect())
}
