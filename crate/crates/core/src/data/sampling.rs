use std::collections::BTreeSet;

use serde::Serialize;

use super::rng::SeededRng;
use super::{DataError, Record, TaskDataset};
use crate::model::{serialize_act, Polarity, Shot, TaskKind};
use crate::runner::ShotTable;

/// Few-shot examples drawn from a training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShotPool {
    pub seed: u64,
    /// Positives drawn per target after capping.
    pub k: usize,
    /// Per class or slot, positives interleaved with their negatives.
    pub per_target: ShotTable,
    /// NLG examples.
    pub generative: Vec<Shot>,
    /// Training ids (dialogue ids for DST) that contributed a shot.
    pub source_ids: BTreeSet<String>,
}

impl ShotPool {
    /// Number of prompt lines a target's shots occupy at most.
    pub fn lines_per_target(&self, negatives_per_positive: usize) -> usize {
        self.k * (1 + negatives_per_positive)
    }
}

/// One candidate example: the id it came from, its input and its answer.
struct Candidate {
    source: String,
    input: String,
    answer: Option<String>,
}

/// Builds `(source id, input, answer)` rows for `target`; `None` answers
/// are negatives.
fn candidates(dataset: &TaskDataset, target: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    for r in &dataset.train {
        match (dataset.kind, r) {
            (TaskKind::Intent, Record::Nlu(item)) => out.push(Candidate {
                source: item.id.clone(),
                input: item.text.text().to_string(),
                answer: (item.intent == target).then(|| "true".to_string()),
            }),
            (TaskKind::SlotFilling, Record::Nlu(item)) => out.push(Candidate {
                source: item.id.clone(),
                input: item.text.text().to_string(),
                answer: item.slots.get(target).map(str::to_string),
            }),
            (TaskKind::Act, Record::Act(item)) => out.push(Candidate {
                source: item.id.clone(),
                input: item.system_text.text().to_string(),
                answer: item.acts.contains(target).then(|| "true".to_string()),
            }),
            (TaskKind::Dst, Record::Dst(d)) => {
                for (utterance, delta) in d.turn_deltas() {
                    out.push(Candidate {
                        source: d.id().to_string(),
                        input: utterance.text().to_string(),
                        answer: delta.get(target).map(str::to_string),
                    });
                }
            }
            _ => {}
        }
    }
    out
}

fn draw_target(
    dataset: &TaskDataset,
    target: &str,
    k: usize,
    seed: u64,
    negatives_per_positive: usize,
    sources: &mut BTreeSet<String>,
) -> Result<Vec<Shot>, DataError> {
    let (positives, negatives): (Vec<Candidate>, Vec<Candidate>) =
        candidates(dataset, target).into_iter().partition(|c| c.answer.is_some());
    let insufficient = |reason: &str| DataError::InsufficientData {
        target: target.to_string(),
        reason: reason.to_string(),
    };
    if positives.is_empty() {
        return Err(insufficient("no positive training examples"));
    }
    if negatives.is_empty() {
        return Err(insufficient("no negative training examples"));
    }
    if positives.len() < k {
        log::warn!(
            "{target:?}: only {} positive examples for {k} shots",
            positives.len()
        );
    }
    let mut rng = SeededRng::for_target(seed, target);
    let pos = rng.sample_indices(positives.len(), k);
    let neg = rng.sample_indices(negatives.len(), k * negatives_per_positive);
    let binary = matches!(dataset.kind, TaskKind::Intent | TaskKind::Act);

    let mut shots = Vec::with_capacity(pos.len() + neg.len());
    let mut neg_iter = neg.iter();
    for &p in &pos {
        let c = &positives[p];
        let answer = c.answer.as_deref().expect("positive");
        shots.push(Shot::new(&c.input, answer, Polarity::Positive).expect("validated text"));
        sources.insert(c.source.clone());
        for &n in neg_iter.by_ref().take(negatives_per_positive) {
            let c = &negatives[n];
            let output = if binary { "false" } else { "" };
            shots.push(Shot::new(&c.input, output, Polarity::Negative).expect("validated text"));
            sources.insert(c.source.clone());
        }
    }
    Ok(shots)
}

/// Draws `k` positives per target (capped at the task's shot cap), each
/// followed by `negatives_per_positive` negatives, without replacement.
///
/// Each target gets its own stream derived from `seed` and the target name,
/// so adding a class does not perturb the others. NLG draws `k` items.
pub fn sample_shots(
    dataset: &TaskDataset,
    k: usize,
    seed: u64,
    negatives_per_positive: usize,
) -> Result<ShotPool, DataError> {
    if k == 0 {
        return Err(DataError::InvalidSize("shot count must be at least 1".into()));
    }
    let k = k.min(dataset.kind.shot_cap());
    let mut pool = ShotPool {
        seed,
        k,
        per_target: ShotTable::new(),
        generative: Vec::new(),
        source_ids: BTreeSet::new(),
    };
    if dataset.kind == TaskKind::Nlg {
        let items: Vec<_> = dataset
            .train
            .iter()
            .filter_map(|r| match r {
                Record::Nlg(item) => Some(item),
                _ => None,
            })
            .collect();
        let mut rng = SeededRng::for_target(seed, "nlg");
        for i in rng.sample_indices(items.len(), k) {
            let item = items[i];
            pool.generative.push(
                Shot::new(serialize_act(&item.act), &item.reference, Polarity::Neutral)
                    .expect("validated text"),
            );
            pool.source_ids.insert(item.id.clone());
        }
        return Ok(pool);
    }
    if negatives_per_positive == 0 {
        return Err(DataError::InvalidSize(
            "binary and value prompts need at least one negative per positive".into(),
        ));
    }
    for target in dataset.labels.iter() {
        let shots = draw_target(dataset, target, k, seed, negatives_per_positive, &mut pool.source_ids)?;
        pool.per_target.insert(target.to_string(), shots);
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_records;

    fn nlu_dataset(kind: TaskKind) -> TaskDataset {
        let mut train = String::new();
        for i in 0..40 {
            let intent = ["play", "book", "rate"][i % 3];
            let slots = if i % 2 == 0 {
                format!(r#"{{"artist":"band {i}"}}"#)
            } else {
                "{}".into()
            };
            train.push_str(&format!(
                r#"{{"id":"tr{i}","text":"utterance number {i}","intent":"{intent}","slots":{slots}}}"#
            ));
            train.push('\n');
        }
        let test = r#"{"id":"te0","text":"play band x","intent":"play","slots":{"artist":"band x"}}"#;
        TaskDataset::new(
            kind,
            parse_records(kind, &train).unwrap(),
            parse_records(kind, test).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_pool() {
        let ds = nlu_dataset(TaskKind::Intent);
        let a = sample_shots(&ds, 1, 7, 1).unwrap();
        assert_eq!(a, sample_shots(&ds, 1, 7, 1).unwrap());
        assert_ne!(a, sample_shots(&ds, 3, 8, 1).unwrap());
    }

    #[test]
    fn interleaved_polarity() {
        let ds = nlu_dataset(TaskKind::Intent);
        let pool = sample_shots(&ds, 4, 1, 2).unwrap();
        for (label, shots) in &pool.per_target {
            assert_eq!(shots.len(), 12, "{label}");
            for (i, s) in shots.iter().enumerate() {
                let expected = if i % 3 == 0 { Polarity::Positive } else { Polarity::Negative };
                assert_eq!(s.polarity, expected);
            }
        }
        assert!(!pool.source_ids.contains("te0"));
    }

    #[test]
    fn slot_pool_is_capped() {
        let ds = nlu_dataset(TaskKind::SlotFilling);
        let pool = sample_shots(&ds, 40, 3, 1).unwrap();
        assert_eq!(pool.k, 15);
        let shots = &pool.per_target["artist"];
        assert_eq!(shots.iter().filter(|s| s.polarity == Polarity::Positive).count(), 15);
        assert!(shots
            .iter()
            .all(|s| (s.polarity == Polarity::Negative) == s.output.is_empty()));
    }

    #[test]
    fn class_without_training_items() {
        let train = parse_records(TaskKind::Intent, r#"{"id":"1","text":"a","intent":"play"}"#).unwrap();
        let test = parse_records(TaskKind::Intent, r#"{"id":"2","text":"b","intent":"book"}"#).unwrap();
        let ds = TaskDataset::new(TaskKind::Intent, train, test).unwrap();
        match sample_shots(&ds, 1, 7, 1) {
            Err(DataError::InsufficientData { target, .. }) => assert_eq!(target, "book"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(sample_shots(&ds, 0, 7, 1), Err(DataError::InvalidSize(_))));
    }

    #[test]
    fn dst_shots_use_turn_deltas() {
        let line = r#"{"dialogue_id":"d1","turns":[{"speaker":"user","text":"cheap please","state":{"price":"cheap"}},{"speaker":"system","text":"ok"},{"speaker":"user","text":"north","state":{"price":"cheap","area":"north"}}]}"#;
        let test = r#"{"dialogue_id":"d2","turns":[{"speaker":"user","text":"x","state":{"area":"south"}}]}"#;
        let ds = TaskDataset::new(
            TaskKind::Dst,
            parse_records(TaskKind::Dst, line).unwrap(),
            parse_records(TaskKind::Dst, test).unwrap(),
        )
        .unwrap();
        let pool = sample_shots(&ds, 1, 0, 1).unwrap();
        let price = &pool.per_target["price"];
        assert_eq!(price[0].input, "cheap please");
        assert_eq!(price[0].output, "cheap");
        assert_eq!(price[1].input, "north");
        assert_eq!(price[1].polarity, Polarity::Negative);
        assert_eq!(pool.per_target["area"][0].input, "north");
    }

    #[test]
    fn nlg_pool() {
        let train = (0..30)
            .map(|i| format!(r#"{{"id":"n{i}","act":"inform(name=h{i})","reference":"h{i} is nice"}}"#))
            .collect::<Vec<_>>()
            .join("\n");
        let test = r#"{"id":"t","act":"inform(name=z)","reference":"z"}"#;
        let ds = TaskDataset::new(
            TaskKind::Nlg,
            parse_records(TaskKind::Nlg, &train).unwrap(),
            parse_records(TaskKind::Nlg, test).unwrap(),
        )
        .unwrap();
        let pool = sample_shots(&ds, 25, 5, 1).unwrap();
        assert_eq!(pool.generative.len(), 20);
        assert!(pool.generative.iter().all(|s| s.input.starts_with("inform(name=h")));
    }
}
