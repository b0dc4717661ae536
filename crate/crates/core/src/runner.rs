//! Per-task prediction: build prompts, dispatch the forwards, and turn the
//! continuations back into structured predictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::model::{serialize_act, DialogueAct, LabelSet, Shot, SlotValueMap, Speaker, Utterance};
use crate::prefix::{
    build_binary_prefix, build_generative_prefix, build_value_prefix, BudgetPolicy, PrimedPrompt,
    PromptError, PromptStyle, TokenCounter,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error("prompt for {target:?}: {source}")]
    Prompt {
        target: String,
        #[source]
        source: PromptError,
    },
    #[error("no shots for {0:?}")]
    MissingShots(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Shots keyed by class or slot name.
pub type ShotTable = BTreeMap<String, Vec<Shot>>;

/// Something that went wrong for one forward without aborting the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    Backend { target: String, error: String },
    Unparseable { target: String, text: String },
    EmptyValue { target: String },
}

impl Issue {
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, Issue::Backend { .. })
    }
}

/// A prediction together with the prompts that produced it and any
/// per-forward problems.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    pub prompts: Vec<String>,
    pub issues: Vec<Issue>,
}

impl<T> Outcome<T> {
    pub fn prompts_hash(&self) -> String {
        prompts_hash(&self.prompts)
    }
}

/// SHA-256 over the prompts, NUL-separated, hex encoded.
pub fn prompts_hash(prompts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for p in prompts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryVerdict {
    pub answer: bool,
    pub score: f64,
    /// False when the continuation started with neither token.
    pub parsed: bool,
}

/// Reads a true/false continuation. The score is the log-probability of the
/// true token at the first position when the backend reported one, else +1
/// for true and -1 for false.
pub fn parse_binary(response: &CompletionResponse, style: &PromptStyle) -> BinaryVerdict {
    let text = response.text.trim().to_lowercase();
    let true_token = style.true_token.to_lowercase();
    let false_token = style.false_token.to_lowercase();
    let (answer, parsed) = if text.starts_with(&true_token) {
        (true, true)
    } else if text.starts_with(&false_token) {
        (false, true)
    } else {
        (false, false)
    };
    let score = match &response.first_token_logprobs {
        Some(lp) if !lp.is_empty() => true_token_logprob(lp, &true_token),
        _ => {
            if answer {
                1.0
            } else {
                -1.0
            }
        }
    };
    BinaryVerdict {
        answer,
        score,
        parsed,
    }
}

/// Log-probability of the first sub-token of `true_token`: an exact match
/// if listed, otherwise the longest listed prefix of it.
fn true_token_logprob(logprobs: &BTreeMap<String, f64>, true_token: &str) -> f64 {
    let mut best: Option<(usize, f64)> = None;
    for (token, &lp) in logprobs {
        let t = token.trim().to_lowercase();
        if t.is_empty() || !true_token.starts_with(&t) {
            continue;
        }
        let better = match best {
            None => true,
            Some((len, prev)) => t.len() > len || (t.len() == len && lp > prev),
        };
        if better {
            best = Some((t.len(), lp));
        }
    }
    best.map_or(f64::NEG_INFINITY, |(_, lp)| lp)
}

/// Reads a slot value continuation up to the example separator; the none
/// token or an empty continuation means the slot is absent.
pub fn parse_value(response: &CompletionResponse, style: &PromptStyle) -> Option<String> {
    let text = response.text.as_str();
    let text = text
        .split(style.example_separator.as_str())
        .next()
        .unwrap_or_default()
        .trim();
    if text.is_empty() || text.eq_ignore_ascii_case(&style.none_token) {
        None
    } else {
        Some(text.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPrediction {
    /// One score per label, in label order.
    pub scores: Vec<(String, f64)>,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActPrediction {
    pub predicted: BTreeSet<String>,
}

/// Predicted state after each user turn of a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DstTrace(pub Vec<SlotValueMap>);

impl DstTrace {
    pub fn turns(&self) -> &[SlotValueMap] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Drives predictions against one backend with one prompt style.
pub struct Runner<'a> {
    backend: &'a dyn Backend,
    counter: &'a dyn TokenCounter,
    style: PromptStyle,
    want_logprobs: bool,
}

impl<'a> Runner<'a> {
    pub fn new(backend: &'a dyn Backend, counter: &'a dyn TokenCounter, style: PromptStyle) -> Self {
        Self {
            backend,
            counter,
            style,
            want_logprobs: true,
        }
    }

    /// Whether binary forwards ask for first-token log-probabilities.
    pub fn want_logprobs(mut self, on: bool) -> Self {
        self.want_logprobs = on;
        self
    }

    pub fn style(&self) -> &PromptStyle {
        &self.style
    }

    fn shots_for<'s>(&self, table: &'s ShotTable, target: &str) -> Result<&'s [Shot], RunError> {
        table
            .get(target)
            .map(Vec::as_slice)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| RunError::MissingShots(target.to_string()))
    }

    fn dispatch(
        &self,
        prompts: &[PrimedPrompt],
        want_logprobs: bool,
    ) -> Vec<Result<CompletionResponse, BackendError>> {
        let requests: Vec<CompletionRequest> = prompts
            .iter()
            .map(|p| CompletionRequest::greedy(p, want_logprobs))
            .collect();
        self.backend.complete_batch(&requests)
    }

    fn binary_verdicts(
        &self,
        query: &Utterance,
        labels: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<Vec<Option<BinaryVerdict>>>, RunError> {
        let prompts = labels
            .iter()
            .map(|label| {
                build_binary_prefix(
                    label,
                    self.shots_for(shots, label)?,
                    query,
                    &self.style,
                    budget,
                    self.counter,
                )
                .map_err(|source| RunError::Prompt {
                    target: label.to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let responses = self.dispatch(&prompts, self.want_logprobs);
        let mut issues = Vec::new();
        let verdicts = labels
            .iter()
            .zip(responses)
            .map(|(label, response)| match response {
                Ok(r) => {
                    let v = parse_binary(&r, &self.style);
                    if !v.parsed {
                        issues.push(Issue::Unparseable {
                            target: label.to_string(),
                            text: r.text.clone(),
                        });
                    }
                    Some(v)
                }
                Err(e) => {
                    issues.push(Issue::Backend {
                        target: label.to_string(),
                        error: e.to_string(),
                    });
                    None
                }
            })
            .collect();
        Ok(Outcome {
            value: verdicts,
            prompts: prompts.into_iter().map(|p| p.text).collect(),
            issues,
        })
    }

    /// One binary forward per label; the highest score wins, ties go to the
    /// earlier label. Failed forwards score negative infinity.
    pub fn predict_intent(
        &self,
        query: &Utterance,
        labels: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<IntentPrediction>, RunError> {
        let verdicts = self.binary_verdicts(query, labels, shots, budget)?;
        let scores: Vec<(String, f64)> = labels
            .iter()
            .zip(&verdicts.value)
            .map(|(label, v)| (label.to_string(), v.map_or(f64::NEG_INFINITY, |v| v.score)))
            .collect();
        let mut best = 0;
        for (i, (_, score)) in scores.iter().enumerate() {
            if *score > scores[best].1 {
                best = i;
            }
        }
        let predicted = scores[best].0.clone();
        Ok(Outcome {
            value: IntentPrediction { scores, predicted },
            prompts: verdicts.prompts,
            issues: verdicts.issues,
        })
    }

    /// Multi-label: every act whose forward answers true.
    pub fn predict_acts(
        &self,
        system_utterance: &Utterance,
        labels: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<ActPrediction>, RunError> {
        let verdicts = self.binary_verdicts(system_utterance, labels, shots, budget)?;
        let predicted = labels
            .iter()
            .zip(&verdicts.value)
            .filter(|(_, v)| v.is_some_and(|v| v.answer))
            .map(|(label, _)| label.to_string())
            .collect();
        Ok(Outcome {
            value: ActPrediction { predicted },
            prompts: verdicts.prompts,
            issues: verdicts.issues,
        })
    }

    /// One value forward per slot; absent values are left out of the map.
    pub fn predict_slots(
        &self,
        query: &Utterance,
        slot_names: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<SlotValueMap>, RunError> {
        let prompts = slot_names
            .iter()
            .map(|slot| {
                build_value_prefix(
                    slot,
                    self.shots_for(shots, slot)?,
                    query,
                    &self.style,
                    budget,
                    self.counter,
                )
                .map_err(|source| RunError::Prompt {
                    target: slot.to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let responses = self.dispatch(&prompts, false);
        let mut issues = Vec::new();
        let mut map = SlotValueMap::new();
        for (slot, response) in slot_names.iter().zip(responses) {
            match response {
                Ok(r) => {
                    if r.text.trim().is_empty() {
                        issues.push(Issue::EmptyValue {
                            target: slot.to_string(),
                        });
                    }
                    if let Some(value) = parse_value(&r, &self.style) {
                        map.insert(slot, &value).expect("non-empty slot and value");
                    }
                }
                Err(e) => issues.push(Issue::Backend {
                    target: slot.to_string(),
                    error: e.to_string(),
                }),
            }
        }
        Ok(Outcome {
            value: map,
            prompts: prompts.into_iter().map(|p| p.text).collect(),
            issues,
        })
    }

    /// Predicts the slots mentioned in the last user utterance and writes
    /// them over the previous state. Nothing is ever removed.
    pub fn predict_dst_turn(
        &self,
        previous_state: &SlotValueMap,
        user_utterance: &Utterance,
        slot_names: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<SlotValueMap>, RunError> {
        if user_utterance.speaker() != Speaker::User {
            return Err(RunError::Precondition(
                "dialogue state is updated from user turns only".into(),
            ));
        }
        let turn = self.predict_slots(user_utterance, slot_names, shots, budget)?;
        Ok(Outcome {
            value: previous_state.overwritten_by(&turn.value),
            prompts: turn.prompts,
            issues: turn.issues,
        })
    }

    /// Runs the turn-wise update over a dialogue's user turns in order.
    pub fn track_dialogue<'u, I>(
        &self,
        user_turns: I,
        slot_names: &LabelSet,
        shots: &ShotTable,
        budget: &BudgetPolicy,
    ) -> Result<Outcome<DstTrace>, RunError>
    where
        I: IntoIterator<Item = &'u Utterance>,
    {
        let mut state = SlotValueMap::new();
        let mut trace = Vec::new();
        let mut prompts = Vec::new();
        let mut issues = Vec::new();
        for utterance in user_turns {
            let step = self.predict_dst_turn(&state, utterance, slot_names, shots, budget)?;
            state = step.value;
            trace.push(state.clone());
            prompts.extend(step.prompts);
            issues.extend(step.issues);
        }
        Ok(Outcome {
            value: DstTrace(trace),
            prompts,
            issues,
        })
    }

    /// Single generative forward with the serialized act as the query.
    pub fn generate_nlg(
        &self,
        act: &DialogueAct,
        shots: &[Shot],
        budget: &BudgetPolicy,
    ) -> Result<Outcome<String>, RunError> {
        let query = serialize_act(act);
        let prompt = build_generative_prefix(shots, &query, &self.style, budget, self.counter)
            .map_err(|source| RunError::Prompt {
                target: query.clone(),
                source,
            })?;
        let mut issues = Vec::new();
        let text = match self.dispatch(std::slice::from_ref(&prompt), false).pop() {
            Some(Ok(r)) => r
                .text
                .split(self.style.example_separator.as_str())
                .next()
                .unwrap_or_default()
                .trim()
                .to_string(),
            Some(Err(e)) => {
                issues.push(Issue::Backend {
                    target: query,
                    error: e.to_string(),
                });
                String::new()
            }
            None => unreachable!("one request yields one response"),
        };
        Ok(Outcome {
            value: text,
            prompts: vec![prompt.text],
            issues,
        })
    }
}
