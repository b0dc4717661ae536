use serde::{Deserialize, Serialize};

use super::{check_aligned, names, normalize_value, ratio, MetricError, ScoreReport};
use crate::model::{SlotValueMap, TaskKind, Utterance};

/// Labeled token span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanLabel {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl SpanLabel {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// Places each slot value on the first whole-token match in the utterance
/// that does not overlap an earlier span, so the result is representable as
/// BIO tags. Values with no such match produce no span.
pub fn spans_from_slot_map(utterance: &Utterance, slots: &SlotValueMap) -> Vec<SpanLabel> {
    let tokens: Vec<String> = utterance
        .text()
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let mut spans: Vec<SpanLabel> = Vec::new();
    for (slot, value) in slots.iter() {
        let needle: Vec<String> = normalize_value(value)
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if needle.is_empty() || needle.len() > tokens.len() {
            log::debug!("value {value:?} of {slot} not found in {:?}", utterance.text());
            continue;
        }
        let found = (0..=tokens.len() - needle.len()).find(|&start| {
            let end = start + needle.len();
            tokens[start..end] == needle[..] && !spans.iter().any(|s| s.overlaps(start, end))
        });
        match found {
            Some(start) => spans.push(SpanLabel::new(start, start + needle.len(), slot)),
            None => log::debug!("value {value:?} of {slot} not found in {:?}", utterance.text()),
        }
    }
    spans.sort();
    spans
}

/// Exact span-and-label matching, reported as percentages.
pub fn conll_f1(gold: &[Vec<SpanLabel>], pred: &[Vec<SpanLabel>]) -> Result<ScoreReport, MetricError> {
    check_aligned(gold.len(), pred.len())?;
    let mut correct = 0;
    let mut n_gold = 0;
    let mut n_pred = 0;
    for (g, p) in gold.iter().zip(pred) {
        n_gold += g.len();
        n_pred += p.len();
        let mut unmatched: Vec<&SpanLabel> = g.iter().collect();
        for span in p {
            if let Some(i) = unmatched.iter().position(|s| *s == span) {
                unmatched.swap_remove(i);
                correct += 1;
            }
        }
    }
    let precision = ratio(correct, n_pred);
    let recall = ratio(correct, n_gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScoreReport::new(TaskKind::SlotFilling, gold.len())
        .with(names::PRECISION, 100.0 * precision)
        .with(names::RECALL, 100.0 * recall)
        .with(names::F1, 100.0 * f1))
}
