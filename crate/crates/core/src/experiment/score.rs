use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::Value;

use super::ExperimentError;
use crate::data::Record;
use crate::metrics::{
    classification_report, conll_f1, corpus_bleu, dst_accuracy, multilabel_f1, names, slot_error_rate,
    spans_from_slot_map, MetricError, ScoreReport,
};
use crate::model::{LabelSet, SlotValueMap, TaskKind};
use crate::runner::DstTrace;

#[derive(Debug, Deserialize)]
struct PredictionLine {
    id: String,
    predicted: Value,
}

fn data_err(m: impl Into<String>) -> ExperimentError {
    ExperimentError::Data(m.into())
}

/// Reads `{"id", "predicted", ...}` lines; other fields are ignored.
pub fn parse_predictions(text: &str) -> Result<BTreeMap<String, Value>, ExperimentError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(line).map_err(|e| data_err(format!("predictions line {}: {e}", i + 1)))?;
        if out.insert(p.id.clone(), p.predicted).is_some() {
            return Err(data_err(format!("predictions line {}: duplicate id {:?}", i + 1, p.id)));
        }
    }
    Ok(out)
}

fn typed<T: for<'de> Deserialize<'de>>(id: &str, v: &Value) -> Result<T, ExperimentError> {
    T::deserialize(v).map_err(|e| data_err(format!("prediction for {id:?}: {e}")))
}

fn label_set(labels: BTreeSet<String>) -> Result<LabelSet, ExperimentError> {
    LabelSet::new(labels).map_err(|e| data_err(e.to_string()))
}

/// Scores predictions against gold records of `task`. Every gold item needs
/// a prediction; extra predictions are an error too. Labels are the union of
/// gold and predicted labels.
pub fn score_predictions(
    task: TaskKind,
    gold: &[Record],
    predictions: &BTreeMap<String, Value>,
) -> Result<ScoreReport, ExperimentError> {
    if gold.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(Record::id).collect();
    if let Some(extra) = predictions.keys().find(|id| !gold_ids.contains(id.as_str())) {
        return Err(data_err(format!("prediction for unknown id {extra:?}")));
    }
    let pred_for = |id: &str| {
        predictions
            .get(id)
            .ok_or_else(|| data_err(format!("no prediction for {id:?}")))
    };
    let wrong = |r: &Record| data_err(format!("gold record {:?} is not a {task} record", r.id()));

    let report = match task {
        TaskKind::Intent => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for r in gold {
                let Record::Nlu(item) = r else { return Err(wrong(r)) };
                g.push(item.intent.clone());
                p.push(typed::<String>(&item.id, pred_for(&item.id)?)?.to_lowercase());
            }
            let labels = label_set(g.iter().chain(&p).cloned().collect())?;
            classification_report(&g, &p, &labels)?
        }
        TaskKind::Act => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for r in gold {
                let Record::Act(item) = r else { return Err(wrong(r)) };
                g.push(item.acts.clone());
                let pred: BTreeSet<String> = typed::<BTreeSet<String>>(&item.id, pred_for(&item.id)?)?
                    .into_iter()
                    .map(|a| a.to_lowercase())
                    .collect();
                p.push(pred);
            }
            let labels = label_set(g.iter().chain(&p).flatten().cloned().collect())?;
            multilabel_f1(&g, &p, &labels)?
        }
        TaskKind::SlotFilling => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for r in gold {
                let Record::Nlu(item) = r else { return Err(wrong(r)) };
                let pred: SlotValueMap = typed(&item.id, pred_for(&item.id)?)?;
                g.push(spans_from_slot_map(&item.text, &item.slots));
                p.push(spans_from_slot_map(&item.text, &pred));
            }
            conll_f1(&g, &p)?
        }
        TaskKind::Dst => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            let mut slots = BTreeSet::new();
            for r in gold {
                let Record::Dst(d) = r else { return Err(wrong(r)) };
                let pred: Vec<SlotValueMap> = typed(d.id(), pred_for(d.id())?)?;
                for s in d.states.iter().chain(&pred) {
                    slots.extend(s.slots().map(str::to_string));
                }
                g.push(DstTrace(d.states.clone()));
                p.push(DstTrace(pred));
            }
            if slots.is_empty() {
                return Err(MetricError::Empty.into());
            }
            dst_accuracy(&g, &p, &label_set(slots)?)?
        }
        TaskKind::Nlg => {
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            let mut acts = Vec::new();
            for r in gold {
                let Record::Nlg(item) = r else { return Err(wrong(r)) };
                hyps.push(typed::<String>(&item.id, pred_for(&item.id)?)?);
                refs.push(vec![item.reference.clone()]);
                acts.push(item.act.clone());
            }
            let mut report = ScoreReport::new(TaskKind::Nlg, gold.len()).with(names::BLEU, corpus_bleu(&hyps, &refs)?);
            match slot_error_rate(&acts, &hyps) {
                Ok(slr) => {
                    report.metrics.insert(names::SLR.into(), slr);
                }
                Err(MetricError::NoValueSlots) => {}
                Err(e) => return Err(e.into()),
            }
            report
        }
    };
    Ok(report)
}
