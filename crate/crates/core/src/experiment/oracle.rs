use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use crate::backend::{Backend, BackendError, CompletionRequest, CompletionResponse, ScriptRecord};
use crate::data::{Record, TaskDataset};
use crate::model::{serialize_act, TaskKind};
use crate::prefix::{Family, PromptStyle};

/// Answers every forward with the gold continuation for its query line.
///
/// Prompts are matched on their last line, so the oracle works for any shot
/// pool and budget. Every answered prompt is recorded and can be dumped as
/// scripted-backend records.
#[derive(Debug, Default)]
pub struct OracleBackend {
    answers: HashMap<String, CompletionResponse>,
    seen: Mutex<BTreeMap<String, CompletionResponse>>,
}

fn binary_response(is_true: bool, style: &PromptStyle) -> CompletionResponse {
    let (t, f) = (format!(" {}", style.true_token), format!(" {}", style.false_token));
    let (text, lp_true, lp_false) = if is_true {
        (t.clone(), -0.05, -3.0)
    } else {
        (f.clone(), -3.0, -0.05)
    };
    CompletionResponse::stop(text).with_logprobs([(t, lp_true), (f, lp_false)])
}

fn value_response(value: Option<&str>, style: &PromptStyle) -> CompletionResponse {
    CompletionResponse::stop(format!(" {}", value.unwrap_or(&style.none_token)))
}

impl OracleBackend {
    /// Builds the answer table from the test split of `dataset`. Two items
    /// whose query lines coincide but whose answers differ are an error.
    pub fn for_dataset(dataset: &TaskDataset, style: &PromptStyle) -> Result<Self, String> {
        let mut oracle = Self::default();
        for record in &dataset.test {
            match (dataset.kind, record) {
                (TaskKind::Intent, Record::Nlu(item)) => {
                    for label in dataset.labels.iter() {
                        let stub = Family::Binary { class_name: label }.query_stub(item.text.text(), style);
                        oracle.add(stub, binary_response(item.intent == label, style))?;
                    }
                }
                (TaskKind::Act, Record::Act(item)) => {
                    for label in dataset.labels.iter() {
                        let stub = Family::Binary { class_name: label }.query_stub(item.system_text.text(), style);
                        oracle.add(stub, binary_response(item.acts.contains(label), style))?;
                    }
                }
                (TaskKind::SlotFilling, Record::Nlu(item)) => {
                    for slot in dataset.labels.iter() {
                        let stub = Family::Value { slot }.query_stub(item.text.text(), style);
                        oracle.add(stub, value_response(item.slots.get(slot), style))?;
                    }
                }
                (TaskKind::Dst, Record::Dst(d)) => {
                    for (utterance, delta) in d.turn_deltas() {
                        for slot in dataset.labels.iter() {
                            let stub = Family::Value { slot }.query_stub(utterance.text(), style);
                            oracle.add(stub, value_response(delta.get(slot), style))?;
                        }
                    }
                }
                (TaskKind::Nlg, Record::Nlg(item)) => {
                    let stub = Family::Generative.query_stub(&serialize_act(&item.act), style);
                    oracle.add(stub, CompletionResponse::stop(format!(" {}", item.reference)))?;
                }
                _ => return Err(format!("record {:?} does not belong to {}", record.id(), dataset.kind)),
            }
        }
        Ok(oracle)
    }

    fn add(&mut self, stub: String, response: CompletionResponse) -> Result<(), String> {
        match self.answers.get(&stub) {
            Some(existing) if existing != &response => {
                Err(format!("query line {stub:?} has two different gold answers"))
            }
            _ => {
                self.answers.insert(stub, response);
                Ok(())
            }
        }
    }

    /// Every prompt answered so far, sorted by prompt.
    pub fn records(&self) -> Vec<ScriptRecord> {
        self.seen
            .lock()
            .expect("oracle log poisoned")
            .iter()
            .map(|(prompt, r)| ScriptRecord {
                prompt: prompt.clone(),
                text: r.text.clone(),
                logprobs: r.first_token_logprobs.clone(),
                finish_reason: None,
            })
            .collect()
    }
}

impl Backend for OracleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let last = request.prompt.rsplit('\n').next().unwrap_or_default();
        let mut response = self
            .answers
            .get(last)
            .cloned()
            .ok_or_else(|| BackendError::UnknownPrompt(last.to_string()))?;
        self.seen
            .lock()
            .expect("oracle log poisoned")
            .insert(request.prompt.clone(), response.clone());
        if !request.want_logprobs {
            response.first_token_logprobs = None;
        }
        Ok(response.truncated(&request.stop_sequences))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_records;

    #[test]
    fn conflicting_gold_is_rejected() {
        let train = parse_records(TaskKind::Intent, r#"{"id":"1","text":"a","intent":"x"}"#).unwrap();
        let test = parse_records(
            TaskKind::Intent,
            "{\"id\":\"2\",\"text\":\"b\",\"intent\":\"x\"}\n{\"id\":\"3\",\"text\":\"b\",\"intent\":\"y\"}",
        )
        .unwrap();
        let ds = TaskDataset::new(TaskKind::Intent, train, test).unwrap();
        assert!(OracleBackend::for_dataset(&ds, &PromptStyle::default()).is_err());
    }
}
