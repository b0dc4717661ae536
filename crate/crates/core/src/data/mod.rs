//! Corpus loading and seeded shot sampling.

pub mod records;
pub mod rng;
mod sampling;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{LabelSet, TaskKind};

pub use records::{parse_record, ActItem, DstDialogue, NlgItem, NluItem, Record, Warning};
pub use rng::SeededRng;
pub use sampling::{sample_shots, ShotPool};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("schema error: no items")]
    NoItems,
    #[error("duplicate id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("ids present in both train and test: {0:?}")]
    Overlap(Vec<String>),
    #[error("records are for {found}, dataset is {expected}")]
    WrongKind { expected: TaskKind, found: TaskKind },
    #[error("not enough training data for {target:?}: {reason}")]
    InsufficientData { target: String, reason: String },
    #[error("invalid pool size: {0}")]
    InvalidSize(String),
}

fn record_kind(record: &Record, hint: TaskKind) -> TaskKind {
    match record {
        Record::Nlu(_) if matches!(hint, TaskKind::SlotFilling | TaskKind::Intent) => hint,
        Record::Nlu(_) => TaskKind::Intent,
        Record::Dst(_) => TaskKind::Dst,
        Record::Act(_) => TaskKind::Act,
        Record::Nlg(_) => TaskKind::Nlg,
    }
}

/// Parses a whole JSONL document. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_records(kind: TaskKind, text: &str) -> Result<Vec<Record>, DataError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut warnings = Vec::new();
        let record = parse_record(kind, line, &mut warnings).map_err(|message| DataError::Schema {
            line: line_no,
            message,
        })?;
        for w in warnings {
            match w {
                Warning::MultiValue { slot } => {
                    log::warn!("line {line_no}: slot {slot:?} has several values, keeping the first")
                }
            }
        }
        if !seen.insert(record.id().to_string()) {
            return Err(DataError::DuplicateId {
                id: record.id().to_string(),
                line: line_no,
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(DataError::NoItems);
    }
    Ok(records)
}

pub fn load_records(path: &Path, kind: TaskKind) -> Result<Vec<Record>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(kind, &text)
}

/// Canonical JSONL, one record per line with a trailing newline.
pub fn to_jsonl(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// Train and test splits for one task, with the label inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    pub kind: TaskKind,
    pub train: Vec<Record>,
    pub test: Vec<Record>,
    /// Classes (intent, act) or slots (slot filling, DST) predicted per item.
    /// For NLG, the act types seen.
    pub labels: LabelSet,
    /// Every slot name seen in either split, if any.
    pub slot_schema: Option<LabelSet>,
}

impl TaskDataset {
    pub fn new(kind: TaskKind, train: Vec<Record>, test: Vec<Record>) -> Result<Self, DataError> {
        if train.is_empty() || test.is_empty() {
            return Err(DataError::NoItems);
        }
        for r in train.iter().chain(&test) {
            let found = record_kind(r, kind);
            if found != kind {
                return Err(DataError::WrongKind { expected: kind, found });
            }
        }
        let train_ids: HashSet<&str> = train.iter().map(Record::id).collect();
        let mut overlap: Vec<String> = test
            .iter()
            .map(Record::id)
            .filter(|id| train_ids.contains(id))
            .map(str::to_string)
            .collect();
        if !overlap.is_empty() {
            overlap.sort();
            return Err(DataError::Overlap(overlap));
        }

        let mut classes = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for r in train.iter().chain(&test) {
            match r {
                Record::Nlu(item) => {
                    classes.insert(item.intent.clone());
                    slots.extend(item.slots.slots().map(str::to_string));
                }
                Record::Dst(d) => {
                    for s in &d.states {
                        slots.extend(s.slots().map(str::to_string));
                    }
                }
                Record::Act(item) => classes.extend(item.acts.iter().cloned()),
                Record::Nlg(item) => {
                    classes.insert(item.act.act().to_string());
                    slots.extend(item.act.slots().slots().map(str::to_string));
                }
            }
        }
        let labels = match kind {
            TaskKind::SlotFilling | TaskKind::Dst => slots.clone(),
            _ => classes,
        };
        let labels = LabelSet::new(labels).map_err(|e| DataError::InsufficientData {
            target: kind.as_str().to_string(),
            reason: e.to_string(),
        })?;
        let slot_schema = (!slots.is_empty()).then(|| LabelSet::new(slots).expect("distinct sorted slots"));
        Ok(Self {
            kind,
            train,
            test,
            labels,
            slot_schema,
        })
    }

    pub fn load(kind: TaskKind, train: &Path, test: &Path) -> Result<Self, DataError> {
        Self::new(kind, load_records(train, kind)?, load_records(test, kind)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NLU: &str = r#"{"id":"1","text":"add to playlist kojak","slots":{"name":"kojak"},"intent":"addtoplaylist"}"#;

    #[test]
    fn one_item() {
        let r = parse_records(TaskKind::Intent, NLU).unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn empty_and_blank_files() {
        assert!(matches!(parse_records(TaskKind::Intent, ""), Err(DataError::NoItems)));
        assert!(matches!(parse_records(TaskKind::Intent, "\n  \n"), Err(DataError::NoItems)));
    }

    #[test]
    fn malformed_line_three() {
        let text = format!("{NLU}\n{}\n{{oops\n", NLU.replace("\"1\"", "\"2\""));
        match parse_records(TaskKind::Intent, &text) {
            Err(DataError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids() {
        let text = format!("{NLU}\n{NLU}\n");
        assert!(matches!(
            parse_records(TaskKind::Intent, &text),
            Err(DataError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn reload_is_idempotent() {
        let text = concat!(
            r#"{"id":"1","text":"Add To playlist kojak","slots":{"name":"Kojak","x":"None"},"intent":"add"}"#,
            "\n",
            r#"{"id":7,"text":"play it","intent":"play"}"#
        );
        let first = parse_records(TaskKind::Intent, text).unwrap();
        let second = parse_records(TaskKind::Intent, &to_jsonl(&first)).unwrap();
        assert_eq!(first, second);
        assert_eq!(to_jsonl(&first), to_jsonl(&second));
    }

    #[test]
    fn dataset_labels_and_disjointness() {
        let train = parse_records(
            TaskKind::Intent,
            concat!(
                r#"{"id":"1","text":"a","intent":"play","slots":{"b":"x"}}"#,
                "\n",
                r#"{"id":"2","text":"b","intent":"add","slots":{"a":"y"}}"#
            ),
        )
        .unwrap();
        let test = parse_records(TaskKind::Intent, r#"{"id":"3","text":"c","intent":"play"}"#).unwrap();
        let ds = TaskDataset::new(TaskKind::Intent, train.clone(), test).unwrap();
        assert_eq!(ds.labels.labels(), ["add", "play"]);
        assert_eq!(ds.slot_schema.unwrap().labels(), ["a", "b"]);
        assert!(matches!(
            TaskDataset::new(TaskKind::Intent, train.clone(), train[..1].to_vec()),
            Err(DataError::Overlap(ids)) if ids == ["1"]
        ));
    }

    #[test]
    fn wrong_kind() {
        let nlu = parse_records(TaskKind::Intent, NLU).unwrap();
        assert!(matches!(
            TaskDataset::new(TaskKind::Act, nlu.clone(), nlu),
            Err(DataError::WrongKind { .. })
        ));
    }
}
