//! Converters from upstream corpus layouts to the canonical JSONL records.
//!
//! * SNIPS: the `seq.in` / `seq.out` / `label` triple used by most slot-filling
//!   benchmarks (whitespace tokens, BIO tags, one intent per line), or the same
//!   three columns in one tab-separated file.
//! * MultiWOZ 2.1 `data.json`: user/system logs with per-turn belief-state
//!   metadata (DST) and `dialog_act` annotations (ACT).
//! * FewShotWOZ: `act ( slot = value ; ... ) & reference` lines.
//!
//! Every produced line is re-parsed with the canonical loader before it is
//! emitted, so converter output always loads.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::data::{parse_record, Record};
use crate::model::{TaskKind, RESERVED_CHARS};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Unsupported(String),
    #[error("nothing to convert")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Snips,
    Multiwoz,
    Fewshotwoz,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "snips" => Ok(Source::Snips),
            "multiwoz" => Ok(Source::Multiwoz),
            "fewshotwoz" => Ok(Source::Fewshotwoz),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

/// Converted records plus the number of lossy fixes applied on the way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub kind: TaskKind,
    pub records: Vec<Record>,
    pub warnings: usize,
}

impl Conversion {
    pub fn to_jsonl(&self) -> String {
        crate::data::to_jsonl(&self.records)
    }
}

fn format_err(line: usize, message: impl Into<String>) -> ConvertError {
    ConvertError::Format {
        line,
        message: message.into(),
    }
}

/// Replaces reserved grammar characters and line breaks with spaces.
fn scrub(text: &str, warnings: &mut usize) -> String {
    if text.contains(RESERVED_CHARS) || text.contains(['\n', '\r', '\t']) {
        *warnings += 1;
    }
    text.replace(RESERVED_CHARS, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct Builder {
    kind: TaskKind,
    records: Vec<Record>,
    seen: BTreeSet<String>,
    warnings: usize,
}

impl Builder {
    fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            records: Vec::new(),
            seen: BTreeSet::new(),
            warnings: 0,
        }
    }

    fn push(&mut self, line: usize, value: Value) -> Result<(), ConvertError> {
        let text = serde_json::to_string(&value).expect("json value");
        let mut w = Vec::new();
        let record = parse_record(self.kind, &text, &mut w).map_err(|m| format_err(line, m))?;
        self.warnings += w.len();
        if !self.seen.insert(record.id().to_string()) {
            return Err(format_err(line, format!("duplicate id {:?}", record.id())));
        }
        self.records.push(record);
        Ok(())
    }

    fn finish(self) -> Result<Conversion, ConvertError> {
        if self.records.is_empty() {
            return Err(ConvertError::Empty);
        }
        Ok(Conversion {
            kind: self.kind,
            records: self.records,
            warnings: self.warnings,
        })
    }
}

/// Slot map from BIO tags. A slot tagged twice keeps its first span.
pub fn bio_to_slots(tokens: &[&str], tags: &[&str]) -> Result<(Map<String, Value>, usize), String> {
    if tokens.len() != tags.len() {
        return Err(format!("{} tokens but {} tags", tokens.len(), tags.len()));
    }
    let mut spans: Vec<(String, Vec<&str>)> = Vec::new();
    for (token, tag) in tokens.iter().zip(tags) {
        if *tag == "O" {
            continue;
        }
        let (prefix, slot) = tag
            .split_once('-')
            .ok_or_else(|| format!("malformed tag {tag:?}"))?;
        let continues = prefix == "I" && spans.last().is_some_and(|(s, _)| s == slot);
        match prefix {
            "B" | "I" if !continues => spans.push((slot.to_string(), vec![token])),
            "I" => spans.last_mut().expect("open span").1.push(token),
            _ => return Err(format!("malformed tag {tag:?}")),
        }
        // an I- tag after O or another slot opens a new span, as conlleval does
    }
    let mut map = Map::new();
    let mut dropped = 0;
    let mut scrubbed = 0;
    for (slot, words) in spans {
        if map.contains_key(&slot) {
            dropped += 1;
            continue;
        }
        map.insert(slot, Value::String(scrub(&words.join(" "), &mut scrubbed)));
    }
    Ok((map, dropped + scrubbed))
}

fn snips_item(b: &mut Builder, line: usize, text: &str, tags: &str, intent: &str) -> Result<(), ConvertError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let tag_list: Vec<&str> = tags.split_whitespace().collect();
    let (slots, w) = bio_to_slots(&tokens, &tag_list).map_err(|m| format_err(line, m))?;
    b.warnings += w;
    let text = scrub(text, &mut b.warnings);
    b.push(
        line,
        json!({"id": line.to_string(), "text": text, "intent": intent.trim(), "slots": slots}),
    )
}

/// `tokens<TAB>tags<TAB>intent` per line; ids are line numbers.
pub fn convert_snips_tsv(text: &str, kind: TaskKind) -> Result<Conversion, ConvertError> {
    check_nlu(kind)?;
    let mut b = Builder::new(kind);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [text, tags, intent] = cols[..] else {
            return Err(format_err(i + 1, format!("expected 3 tab-separated columns, found {}", cols.len())));
        };
        snips_item(&mut b, i + 1, text, tags, intent)?;
    }
    b.finish()
}

/// The parallel `seq.in`, `seq.out` and `label` files.
pub fn convert_snips_parallel(seq_in: &str, seq_out: &str, labels: &str, kind: TaskKind) -> Result<Conversion, ConvertError> {
    check_nlu(kind)?;
    let (a, t, l): (Vec<&str>, Vec<&str>, Vec<&str>) = (seq_in.lines().collect(), seq_out.lines().collect(), labels.lines().collect());
    if a.len() != t.len() || a.len() != l.len() {
        return Err(ConvertError::Unsupported(format!(
            "seq.in, seq.out and label have {}, {} and {} lines",
            a.len(),
            t.len(),
            l.len()
        )));
    }
    let mut b = Builder::new(kind);
    for i in 0..a.len() {
        if a[i].trim().is_empty() {
            continue;
        }
        snips_item(&mut b, i + 1, a[i], t[i], l[i])?;
    }
    b.finish()
}

fn check_nlu(kind: TaskKind) -> Result<(), ConvertError> {
    match kind {
        TaskKind::SlotFilling | TaskKind::Intent => Ok(()),
        other => Err(ConvertError::Unsupported(format!("snips data has no {other} labels"))),
    }
}

const MISSING_VALUES: [&str; 4] = ["", "not mentioned", "none", "not given"];

/// Belief state from one MultiWOZ system-turn metadata object, with slots
/// named `domain-slot` and booking slots `domain-book slot`.
fn multiwoz_state(metadata: &Value, warnings: &mut usize) -> Map<String, Value> {
    let mut state = Map::new();
    let Some(domains) = metadata.as_object() else {
        return state;
    };
    for (domain, parts) in domains {
        for (part, prefix) in [("semi", ""), ("book", "book ")] {
            let Some(slots) = parts.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, value) in slots {
                let Some(v) = value.as_str() else { continue };
                let v = scrub(v, warnings).to_lowercase();
                if MISSING_VALUES.contains(&v.as_str()) {
                    continue;
                }
                let name = format!("{}-{prefix}{}", domain.to_lowercase(), slot.to_lowercase());
                state.insert(name, Value::String(v));
            }
        }
    }
    state
}

/// Act types of one turn, domain prefix removed (`Restaurant-Inform` to `inform`).
fn multiwoz_acts(turn: &Value) -> Option<BTreeSet<String>> {
    let acts = turn.get("dialog_act")?.as_object()?;
    Some(
        acts.keys()
            .map(|k| k.rsplit('-').next().unwrap_or(k).to_lowercase())
            .collect(),
    )
}

/// MultiWOZ `data.json` to DST dialogues or ACT items. Dialogues that cannot
/// be represented (empty turns) are skipped and counted as warnings.
pub fn convert_multiwoz(text: &str, kind: TaskKind) -> Result<Conversion, ConvertError> {
    if !matches!(kind, TaskKind::Dst | TaskKind::Act) {
        return Err(ConvertError::Unsupported(format!("multiwoz conversion supports dst and act, not {kind}")));
    }
    let root: Value = serde_json::from_str(text).map_err(|e| format_err(e.line(), e.to_string()))?;
    let dialogues = root
        .as_object()
        .ok_or_else(|| format_err(1, "expected an object of dialogues"))?;
    let mut b = Builder::new(kind);
    for (n, (id, dialogue)) in dialogues.iter().enumerate() {
        let Some(log) = dialogue.get("log").and_then(Value::as_array) else {
            return Err(format_err(1, format!("dialogue {id} has no log")));
        };
        let texts: Vec<String> = log
            .iter()
            .map(|t| one_line(t.get("text").and_then(Value::as_str).unwrap_or_default()))
            .collect();
        if texts.iter().any(String::is_empty) {
            log::warn!("skipping dialogue {id}: empty turn");
            b.warnings += 1;
            continue;
        }
        match kind {
            TaskKind::Dst => {
                let mut turns = Vec::new();
                for (i, text) in texts.iter().enumerate() {
                    if i % 2 == 0 {
                        let mut turn = json!({"speaker": "user", "text": text});
                        if let Some(sys) = log.get(i + 1) {
                            let state = multiwoz_state(sys.get("metadata").unwrap_or(&Value::Null), &mut b.warnings);
                            turn["state"] = Value::Object(state);
                        }
                        turns.push(turn);
                    } else {
                        turns.push(json!({"speaker": "system", "text": text}));
                    }
                }
                b.push(n + 1, json!({"dialogue_id": id, "turns": turns}))?;
            }
            _ => {
                for (i, turn) in log.iter().enumerate().skip(1).step_by(2) {
                    let Some(acts) = multiwoz_acts(turn) else {
                        return Err(format_err(n + 1, format!("dialogue {id} turn {i} has no dialog_act")));
                    };
                    let acts: Vec<String> = acts.iter().map(|a| scrub(a, &mut b.warnings)).collect();
                    b.push(
                        n + 1,
                        json!({"id": format!("{id}#{i}"), "system_text": texts[i], "acts": acts}),
                    )?;
                }
            }
        }
    }
    b.finish()
}

/// Parses `inform ( name = hilton ; area = chinatown )` leniently: spaces
/// around tokens are ignored and slots without a value are dropped.
fn fewshotwoz_act(text: &str, warnings: &mut usize) -> Result<String, String> {
    let text = text.trim();
    let open = text.find('(').ok_or("act has no '('")?;
    let close = text.rfind(')').ok_or("act has no ')'")?;
    if close < open {
        return Err("')' before '('".into());
    }
    let name = one_line(&text[..open]).replace(' ', "_");
    if name.is_empty() {
        return Err("empty act name".into());
    }
    if !text[close + 1..].trim().is_empty() {
        // several acts on one line; only the first is kept
        *warnings += 1;
    }
    let mut pairs = Vec::new();
    for part in text[open + 1..close].split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('=') {
            Some((slot, value)) => {
                let slot = one_line(slot).replace(' ', "_");
                let value = scrub(value.trim().trim_matches('\''), warnings);
                if slot.is_empty() || value.is_empty() {
                    *warnings += 1;
                    continue;
                }
                pairs.push(format!("{slot}={value}"));
            }
            None => *warnings += 1,
        }
    }
    Ok(format!("{name}({})", pairs.join(";")))
}

/// FewShotWOZ `act & reference` lines; ids are line numbers.
pub fn convert_fewshotwoz(text: &str) -> Result<Conversion, ConvertError> {
    let mut b = Builder::new(TaskKind::Nlg);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (act, reference) = line
            .split_once('&')
            .ok_or_else(|| format_err(i + 1, "expected 'act & reference'"))?;
        let act = fewshotwoz_act(act, &mut b.warnings).map_err(|m| format_err(i + 1, m))?;
        let reference = one_line(reference);
        b.push(
            i + 1,
            json!({"id": (i + 1).to_string(), "act": act, "reference": reference}),
        )?;
    }
    b.finish()
}

fn read(path: &Path) -> Result<String, ConvertError> {
    std::fs::read_to_string(path).map_err(|source| ConvertError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Default task per source when none is given.
pub fn default_task(source: Source) -> TaskKind {
    match source {
        Source::Snips => TaskKind::SlotFilling,
        Source::Multiwoz => TaskKind::Dst,
        Source::Fewshotwoz => TaskKind::Nlg,
    }
}

/// Converts a file (or, for SNIPS, a directory holding `seq.in`, `seq.out`
/// and `label`).
pub fn convert_path(source: Source, input: &Path, task: Option<TaskKind>) -> Result<Conversion, ConvertError> {
    let kind = task.unwrap_or(default_task(source));
    match source {
        Source::Snips if input.is_dir() => convert_snips_parallel(
            &read(&input.join("seq.in"))?,
            &read(&input.join("seq.out"))?,
            &read(&input.join("label"))?,
            kind,
        ),
        Source::Snips => convert_snips_tsv(&read(input)?, kind),
        Source::Multiwoz => convert_multiwoz(&read(input)?, kind),
        Source::Fewshotwoz => {
            if kind != TaskKind::Nlg {
                return Err(ConvertError::Unsupported(format!("fewshotwoz data has no {kind} labels")));
            }
            convert_fewshotwoz(&read(input)?)
        }
    }
}
