use super::{check_aligned, normalize_value, MetricError};
use crate::model::DialogueAct;

/// Slot error rate counting only missing values: per item, the share of the
/// act's slot values that do not occur (normalized substring match) in the
/// generated text. Returns the mean over items with at least one value, ×100.
pub fn slot_error_rate(acts: &[DialogueAct], hypotheses: &[String]) -> Result<f64, MetricError> {
    check_aligned(acts.len(), hypotheses.len())?;
    let mut sum = 0.0;
    let mut scored = 0usize;
    for (act, hyp) in acts.iter().zip(hypotheses) {
        let n = act.slots().len();
        if n == 0 {
            continue;
        }
        let text = normalize_value(hyp);
        let missing = act
            .slots()
            .iter()
            .filter(|(_, v)| !text.contains(&normalize_value(v)))
            .count();
        sum += missing as f64 / n as f64;
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricError::NoValueSlots);
    }
    Ok(100.0 * sum / scored as f64)
}
