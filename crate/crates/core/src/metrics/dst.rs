use super::{check_aligned, names, normalize_value, ratio, MetricError, ScoreReport};
use crate::model::{LabelSet, SlotValueMap, TaskKind};
use crate::runner::DstTrace;

fn same_value(gold: &SlotValueMap, pred: &SlotValueMap, slot: &str) -> bool {
    match (gold.get(slot), pred.get(slot)) {
        (None, None) => true,
        (Some(g), Some(p)) => normalize_value(g) == normalize_value(p),
        _ => false,
    }
}

/// Joint accuracy (whole state right) and slot accuracy (each tracked
/// slot's value-or-absence right), both in percent, over every user turn.
pub fn dst_accuracy(
    gold_traces: &[DstTrace],
    pred_traces: &[DstTrace],
    tracked_slots: &LabelSet,
) -> Result<ScoreReport, MetricError> {
    check_aligned(gold_traces.len(), pred_traces.len())?;
    let mut turns = 0;
    let mut joint = 0;
    let mut slot_hits = 0;
    for (gold, pred) in gold_traces.iter().zip(pred_traces) {
        check_aligned(gold.len(), pred.len())?;
        for (g, p) in gold.turns().iter().zip(pred.turns()) {
            turns += 1;
            let hits = tracked_slots.iter().filter(|s| same_value(g, p, s)).count();
            slot_hits += hits;
            if hits == tracked_slots.len() {
                joint += 1;
            }
        }
    }
    if turns == 0 {
        return Err(MetricError::Empty);
    }
    let mut report = ScoreReport::new(TaskKind::Dst, gold_traces.len())
        .with(names::JOINT, 100.0 * ratio(joint, turns))
        .with(names::SLOT, 100.0 * ratio(slot_hits, turns * tracked_slots.len()));
    report
        .notes
        .insert("tracked_slots".into(), tracked_slots.labels().join(","));
    report.notes.insert("turns".into(), turns.to_string());
    Ok(report)
}
