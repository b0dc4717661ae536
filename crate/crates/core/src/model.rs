//! Domain types shared by every stage of the harness: utterances, dialogues,
//! slot-value dictionaries, dialogue acts, shots and label sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Characters that carry structure in the act grammar and therefore may not
/// appear inside act labels, slot names or values.
pub const RESERVED_CHARS: [char; 4] = [';', '(', ')', '='];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("text contains a newline: {0:?}")]
    Newline(String),
    #[error("dialogue has no turns")]
    EmptyDialogue,
    #[error("dialogue turn {index} has speaker {found:?}, expected {expected:?}")]
    Alternation {
        index: usize,
        expected: Speaker,
        found: Speaker,
    },
    #[error("empty slot name")]
    EmptySlot,
    #[error("empty value for slot {0:?}")]
    EmptyValue(String),
    #[error("{0:?} contains a reserved character (one of `;()=`)")]
    Reserved(String),
    #[error("empty act label")]
    EmptyAct,
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown task kind {0:?}")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::System,
            Speaker::System => Speaker::User,
        }
    }
}

/// A single newline-free turn of text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    text: String,
    speaker: Speaker,
}

impl Utterance {
    pub fn new(text: impl Into<String>, speaker: Speaker) -> Result<Self, ModelError> {
        let text = text.into();
        check_newline_free(&text)?;
        if text.trim().is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        Ok(Self { text, speaker })
    }

    pub fn user(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(text, Speaker::User)
    }

    pub fn system(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(text, Speaker::System)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }
}

pub(crate) fn check_newline_free(text: &str) -> Result<(), ModelError> {
    if text.contains(['\n', '\r']) {
        Err(ModelError::Newline(text.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    id: String,
    turns: Vec<Utterance>,
}

impl Dialogue {
    /// Builds a dialogue, checking that speakers alternate starting with the user.
    pub fn new(id: impl Into<String>, turns: Vec<Utterance>) -> Result<Self, ModelError> {
        if turns.is_empty() {
            return Err(ModelError::EmptyDialogue);
        }
        let mut expected = Speaker::User;
        for (index, turn) in turns.iter().enumerate() {
            if turn.speaker != expected {
                return Err(ModelError::Alternation {
                    index,
                    expected,
                    found: turn.speaker,
                });
            }
            expected = expected.other();
        }
        Ok(Self {
            id: id.into(),
            turns,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Utterance> {
        self.turns.iter().filter(|u| u.speaker == Speaker::User)
    }
}

/// Slot-value dictionary. Only mentioned slots are stored; a missing key
/// means the slot is unmentioned (`None`). Insertion order is kept for
/// serialization, equality ignores it.
#[derive(Debug, Clone, Default, Eq)]
pub struct SlotValueMap {
    entries: Vec<(String, String)>,
}

impl SlotValueMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `slot` to `value`, replacing any previous value in place.
    /// `None` removes the slot.
    pub fn set(&mut self, slot: &str, value: Option<&str>) -> Result<(), ModelError> {
        if slot.is_empty() {
            return Err(ModelError::EmptySlot);
        }
        match value {
            None => {
                self.entries.retain(|(s, _)| s != slot);
            }
            Some(v) => {
                if v.is_empty() {
                    return Err(ModelError::EmptyValue(slot.to_string()));
                }
                match self.entries.iter_mut().find(|(s, _)| s == slot) {
                    Some(entry) => entry.1 = v.to_string(),
                    None => self.entries.push((slot.to_string(), v.to_string())),
                }
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, slot: &str, value: &str) -> Result<(), ModelError> {
        self.set(slot, Some(value))
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, _)| s == slot)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, slot: &str) -> bool {
        self.get(slot).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(s, v)| (s.as_str(), v.as_str()))
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.as_str())
    }

    /// Returns a copy of `self` with every entry of `update` written over it.
    pub fn overwritten_by(&self, update: &SlotValueMap) -> SlotValueMap {
        let mut merged = self.clone();
        for (slot, value) in update.iter() {
            // both sides already satisfy the non-empty invariants
            merged.set(slot, Some(value)).expect("valid entry");
        }
        merged
    }

    /// Entries of `self` that are new or changed relative to `previous`.
    pub fn delta_from(&self, previous: &SlotValueMap) -> SlotValueMap {
        let entries = self
            .entries
            .iter()
            .filter(|(s, v)| previous.get(s) != Some(v.as_str()))
            .cloned()
            .collect();
        SlotValueMap { entries }
    }

    fn sorted(&self) -> BTreeMap<&str, &str> {
        self.iter().collect()
    }
}

impl PartialEq for SlotValueMap {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.sorted() == other.sorted()
    }
}

impl<S: AsRef<str>, V: AsRef<str>> FromIterator<(S, V)> for SlotValueMap {
    /// Collects pairs; later duplicates overwrite earlier ones, empty values are skipped.
    fn from_iter<I: IntoIterator<Item = (S, V)>>(iter: I) -> Self {
        let mut map = SlotValueMap::new();
        for (s, v) in iter {
            let _ = map.set(s.as_ref(), Some(v.as_ref()));
        }
        map
    }
}

impl Serialize for SlotValueMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (s, v) in &self.entries {
            map.serialize_entry(s, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SlotValueMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor;

        impl<'de> Visitor<'de> for MapVisitor {
            type Value = SlotValueMap;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of slot -> value")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<SlotValueMap, A::Error> {
                let mut out = SlotValueMap::new();
                while let Some((slot, value)) = access.next_entry::<String, Option<String>>()? {
                    out.set(&slot, value.as_deref())
                        .map_err(serde::de::Error::custom)?;
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(MapVisitor)
    }
}

/// A speech act with its slot-value arguments, e.g. `inform(name=hilton;area=chinatown)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueAct {
    act: String,
    slots: SlotValueMap,
}

impl DialogueAct {
    pub fn new(act: impl Into<String>, slots: SlotValueMap) -> Result<Self, ModelError> {
        let act = act.into();
        if act.is_empty() {
            return Err(ModelError::EmptyAct);
        }
        Ok(Self { act, slots })
    }

    pub fn act(&self) -> &str {
        &self.act
    }

    pub fn slots(&self) -> &SlotValueMap {
        &self.slots
    }

    /// Rejects labels, slots and values that the act grammar cannot carry.
    pub fn check_grammar_safe(&self) -> Result<(), ModelError> {
        check_token(&self.act)?;
        for (s, v) in self.slots.iter() {
            check_token(s)?;
            check_token(v)?;
        }
        Ok(())
    }
}

fn check_token(token: &str) -> Result<(), ModelError> {
    check_newline_free(token)?;
    if token.contains(RESERVED_CHARS) {
        Err(ModelError::Reserved(token.to_string()))
    } else {
        Ok(())
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.act)?;
        for (i, (slot, value)) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{slot}={value}")?;
        }
        f.write_str(")")
    }
}

pub fn serialize_act(act: &DialogueAct) -> String {
    act.to_string()
}

/// Error from [`parse_act`]. `offset` is the 1-based byte position at which
/// the input stopped matching the grammar (`len + 1` for premature end).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed dialogue act at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn parse_err(zero_based: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        offset: zero_based + 1,
        message: message.into(),
    }
}

/// Parses `act(slot=value;...)`. No whitespace is trimmed; the parser is the
/// exact inverse of [`serialize_act`].
pub fn parse_act(text: &str) -> Result<DialogueAct, ParseError> {
    let bytes = text.as_bytes();
    let is_reserved = |b: u8| matches!(b, b';' | b'(' | b')' | b'=' | b'\n' | b'\r');

    let mut pos = 0;
    let scan = |mut pos: usize| {
        while pos < bytes.len() && !is_reserved(bytes[pos]) {
            pos += 1;
        }
        pos
    };

    let label_end = scan(pos);
    if label_end == pos {
        return Err(parse_err(pos, "expected act label"));
    }
    let act = &text[pos..label_end];
    pos = label_end;
    if pos >= bytes.len() || bytes[pos] != b'(' {
        return Err(parse_err(pos, "expected `(`"));
    }
    pos += 1;

    let mut slots = SlotValueMap::new();
    if pos < bytes.len() && bytes[pos] == b')' {
        pos += 1;
    } else {
        loop {
            let slot_end = scan(pos);
            if slot_end == pos {
                return Err(parse_err(pos, "expected slot name"));
            }
            let slot = &text[pos..slot_end];
            pos = slot_end;
            if pos >= bytes.len() || bytes[pos] != b'=' {
                return Err(parse_err(pos, "expected `=`"));
            }
            pos += 1;
            let value_end = scan(pos);
            if value_end == pos {
                return Err(parse_err(pos, "expected slot value"));
            }
            let value = &text[pos..value_end];
            if slots.contains(slot) {
                return Err(parse_err(
                    slot_end - slot.len(),
                    format!("duplicate slot {slot:?}"),
                ));
            }
            slots.insert(slot, value).expect("non-empty slot and value");
            pos = value_end;
            match bytes.get(pos) {
                Some(b';') => pos += 1,
                Some(b')') => {
                    pos += 1;
                    break;
                }
                _ => return Err(parse_err(pos, "expected `;` or `)`")),
            }
        }
    }
    if pos != bytes.len() {
        return Err(parse_err(pos, "trailing input after `)`"));
    }
    Ok(DialogueAct {
        act: act.to_string(),
        slots,
    })
}

impl FromStr for DialogueAct {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_act(s)
    }
}

impl Serialize for DialogueAct {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DialogueAct {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_act(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

/// One worked example placed in a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub input: String,
    pub output: String,
    pub polarity: Polarity,
}

impl Shot {
    pub fn new(
        input: impl Into<String>,
        output: impl Into<String>,
        polarity: Polarity,
    ) -> Result<Self, ModelError> {
        let (input, output) = (input.into(), output.into());
        check_newline_free(&input)?;
        check_newline_free(&output)?;
        Ok(Self {
            input,
            output,
            polarity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SlotFilling,
    Intent,
    Dst,
    Act,
    Nlg,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::SlotFilling,
        TaskKind::Intent,
        TaskKind::Dst,
        TaskKind::Act,
        TaskKind::Nlg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SlotFilling => "slot_filling",
            TaskKind::Intent => "intent",
            TaskKind::Dst => "dst",
            TaskKind::Act => "act",
            TaskKind::Nlg => "nlg",
        }
    }

    /// Largest number of shots used for the task in the original experiments.
    pub fn shot_cap(self) -> usize {
        match self {
            TaskKind::SlotFilling | TaskKind::Dst | TaskKind::Act => 15,
            TaskKind::Intent => 10,
            TaskKind::Nlg => 20,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ModelError::UnknownTask(s.to_string()))
    }
}

/// Ordered, duplicate-free list of class, act or slot names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSet(Vec<String>);

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for label in labels {
            let label = label.into();
            if out.contains(&label) {
                return Err(ModelError::DuplicateLabel(label));
            }
            out.push(label);
        }
        if out.is_empty() {
            return Err(ModelError::EmptyLabelSet);
        }
        Ok(Self(out))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(deserializer)?;
        LabelSet::new(labels).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn act(label: &str, pairs: &[(&str, &str)]) -> DialogueAct {
        DialogueAct::new(label, pairs.iter().copied().collect()).unwrap()
    }

    #[test]
    fn serializes_acts() {
        assert_eq!(
            serialize_act(&act("inform", &[("name", "hilton"), ("area", "chinatown")])),
            "inform(name=hilton;area=chinatown)"
        );
        assert_eq!(serialize_act(&act("inform", &[])), "inform()");
        assert_eq!(
            serialize_act(&act("inform", &[("phone", "4155667020")])),
            "inform(phone=4155667020)"
        );
    }

    #[test]
    fn parses_acts() {
        assert_eq!(
            parse_act("inform(name=hilton;area=chinatown)").unwrap(),
            act("inform", &[("name", "hilton"), ("area", "chinatown")])
        );
        assert_eq!(parse_act("inform()").unwrap(), act("inform", &[]));
        let multi = parse_act("inform(name=super 8 san francisco;phone=8005369326)").unwrap();
        assert_eq!(multi.slots().get("name"), Some("super 8 san francisco"));
    }

    #[test]
    fn reports_offsets_on_malformed_acts() {
        assert_eq!(parse_act("inform(name=hilton").unwrap_err().offset, 19);
        assert_eq!(parse_act("inform(name)").unwrap_err().offset, 12);
        assert_eq!(parse_act("(a=b)").unwrap_err().offset, 1);
        assert_eq!(parse_act("inform").unwrap_err().offset, 7);
        assert_eq!(parse_act("inform(a=b))").unwrap_err().offset, 12);
        assert_eq!(parse_act("inform(a=)").unwrap_err().offset, 10);
        assert!(parse_act("inform(a=b;a=c)").is_err());
        assert!(parse_act("inform(a=b;)").is_err());
    }

    #[test]
    fn slot_map_equality_ignores_order() {
        let a: SlotValueMap = [("area", "centre"), ("food", "thai")].into_iter().collect();
        let b: SlotValueMap = [("food", "thai"), ("area", "centre")].into_iter().collect();
        assert_eq!(a, b);
        let c: SlotValueMap = [("food", "thai")].into_iter().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn slot_map_set_and_overwrite() {
        let mut m = SlotValueMap::new();
        m.insert("area", "centre").unwrap();
        m.insert("area", "north").unwrap();
        assert_eq!(m.get("area"), Some("north"));
        assert_eq!(m.len(), 1);
        m.set("area", None).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.insert("area", ""), Err(ModelError::EmptyValue("area".into())));
        assert_eq!(m.insert("", "x"), Err(ModelError::EmptySlot));
    }

    #[test]
    fn slot_map_delta() {
        let prev: SlotValueMap = [("area", "centre"), ("food", "thai")].into_iter().collect();
        let cur: SlotValueMap = [("area", "north"), ("food", "thai"), ("price", "cheap")]
            .into_iter()
            .collect();
        let delta = cur.delta_from(&prev);
        assert_eq!(
            delta,
            [("area", "north"), ("price", "cheap")].into_iter().collect()
        );
        assert_eq!(prev.overwritten_by(&delta), cur);
    }

    #[test]
    fn slot_map_json_keeps_order_and_drops_nulls() {
        let m: SlotValueMap = serde_json::from_str(r#"{"b":"1","a":null,"c":"2"}"#).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"b":"1","c":"2"}"#);
    }

    #[test]
    fn utterance_invariants() {
        assert_eq!(Utterance::user("  "), Err(ModelError::EmptyUtterance));
        assert!(matches!(Utterance::user("a\nb"), Err(ModelError::Newline(_))));
        assert_eq!(Utterance::system("hi").unwrap().speaker(), Speaker::System);
    }

    #[test]
    fn dialogue_alternation() {
        let u = Utterance::user("hi").unwrap();
        let s = Utterance::system("hello").unwrap();
        assert!(Dialogue::new("d", vec![u.clone(), s.clone(), u.clone()]).is_ok());
        assert_eq!(
            Dialogue::new("d", vec![s.clone(), u.clone()]),
            Err(ModelError::Alternation {
                index: 0,
                expected: Speaker::User,
                found: Speaker::System
            })
        );
        assert_eq!(
            Dialogue::new("d", vec![u.clone(), u.clone()]).unwrap_err(),
            ModelError::Alternation {
                index: 1,
                expected: Speaker::System,
                found: Speaker::User
            }
        );
        assert_eq!(Dialogue::new("d", vec![]), Err(ModelError::EmptyDialogue));
    }

    #[test]
    fn grammar_safety() {
        assert!(act("inform", &[("name", "a;b")]).check_grammar_safe().is_err());
        assert!(act("inform", &[("name", "hilton")]).check_grammar_safe().is_ok());
    }

    #[test]
    fn label_sets() {
        assert_eq!(LabelSet::new(Vec::<String>::new()), Err(ModelError::EmptyLabelSet));
        assert_eq!(
            LabelSet::new(["a", "a"]),
            Err(ModelError::DuplicateLabel("a".into()))
        );
        let set = LabelSet::new(["b", "a"]).unwrap();
        assert_eq!(set.position("a"), Some(1));
    }

    #[test]
    fn task_kind_names() {
        for kind in TaskKind::ALL {
            assert_eq!(kind.as_str().parse::<TaskKind>().unwrap(), kind);
        }
        assert_eq!("slot-filling".parse::<TaskKind>().unwrap(), TaskKind::SlotFilling);
        assert!("policy".parse::<TaskKind>().is_err());
    }

    fn safe_token() -> impl Strategy<Value = String> {
        "[a-z0-9 _:.'-]{1,12}"
    }

    proptest! {
        #[test]
        fn act_round_trip(
            label in "[a-z_]{1,10}",
            pairs in proptest::collection::vec((safe_token(), safe_token()), 0..6),
        ) {
            let slots: SlotValueMap = pairs.iter().map(|(s, v)| (s.as_str(), v.as_str())).collect();
            let a = DialogueAct::new(label, slots).unwrap();
            let text = serialize_act(&a);
            let back = parse_act(&text).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(serialize_act(&back), text);
        }

        #[test]
        fn parse_never_panics(text in "\\PC{0,40}") {
            let _ = parse_act(&text);
        }
    }
}
