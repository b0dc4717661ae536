//! Evaluation measures. Scales follow the published result tables column by
//! column: some values are percentages, some fractions.

mod bleu;
mod classification;
mod conll;
mod dst;
mod slr;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TaskKind;

pub use bleu::{corpus_bleu, BLEU_EPSILON, MAX_ORDER};
pub use classification::{classification_report, multilabel_f1};
pub use conll::{conll_f1, spans_from_slot_map, SpanLabel};
pub use dst::dst_accuracy;
pub use slr::slot_error_rate;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("gold has {gold} items but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    Empty,
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("no item has a value-bearing slot")]
    NoValueSlots,
}

pub(crate) fn check_aligned(gold: usize, pred: usize) -> Result<(), MetricError> {
    if gold != pred {
        Err(MetricError::LengthMismatch { gold, pred })
    } else {
        Ok(())
    }
}

/// Lower-cases and collapses runs of whitespace to one space.
pub fn normalize_value(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Metric names used as keys of [`ScoreReport::metrics`].
pub mod names {
    pub const F1: &str = "f1";
    pub const PRECISION: &str = "precision";
    pub const RECALL: &str = "recall";
    pub const MICRO: &str = "micro";
    pub const MACRO: &str = "macro";
    pub const ACC: &str = "acc";
    pub const MICRO_PRECISION: &str = "micro_precision";
    pub const MICRO_RECALL: &str = "micro_recall";
    pub const JOINT: &str = "joint";
    pub const SLOT: &str = "slot";
    pub const BLEU: &str = "bleu";
    /// Missing-value slot error rate; redundant values are not counted.
    pub const SLR: &str = "slr";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: TaskKind,
    pub metrics: BTreeMap<String, f64>,
    pub n_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Forwards that failed at the backend.
    #[serde(default)]
    pub errors: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl ScoreReport {
    pub fn new(task: TaskKind, n_items: usize) -> Self {
        Self {
            task,
            metrics: BTreeMap::new(),
            n_items,
            model: None,
            shots: None,
            seed: None,
            domain: None,
            errors: 0,
            notes: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Absorbs another report's metrics (e.g. SLR into a BLEU report).
    pub fn merge_metrics(&mut self, other: &ScoreReport) {
        for (k, v) in &other.metrics {
            self.metrics.insert(k.clone(), *v);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// F1 from raw counts; zero when undefined.
pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub(crate) fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}
