//! Canonical JSONL schemas, one object per line:
//!
//! * NLU (slot filling and intent): `{"id", "text", "intent", "slots": {slot: value}}`
//! * DST: `{"dialogue_id", "turns": [{"speaker", "text", "state": {slot: value}?}]}`
//! * ACT: `{"id", "system_text", "acts": [label]}`
//! * NLG: `{"id", "act": "inform(name=...;...)", "reference"}`
//!
//! Text is lower-cased, `"None"`/`null`/empty values mean "unmentioned", and
//! values may not contain `;`, `(`, `)` or `=`. DST states are cumulative and
//! attached to user turns; a user turn without a state keeps the previous one.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use serde_json::{json, Value};

use crate::model::{
    parse_act, Dialogue, DialogueAct, SlotValueMap, Speaker, TaskKind, Utterance, RESERVED_CHARS,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NluItem {
    pub id: String,
    pub text: Utterance,
    pub intent: String,
    pub slots: SlotValueMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DstDialogue {
    pub dialogue: Dialogue,
    /// Gold cumulative state after each user turn.
    pub states: Vec<SlotValueMap>,
}

impl DstDialogue {
    pub fn id(&self) -> &str {
        self.dialogue.id()
    }

    /// `(user utterance, slots set or changed in that turn)` per user turn.
    pub fn turn_deltas(&self) -> Vec<(&Utterance, SlotValueMap)> {
        let empty = SlotValueMap::new();
        self.dialogue
            .user_turns()
            .zip(&self.states)
            .enumerate()
            .map(|(i, (u, state))| {
                let prev = if i == 0 { &empty } else { &self.states[i - 1] };
                (u, state.delta_from(prev))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActItem {
    pub id: String,
    pub system_text: Utterance,
    pub acts: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NlgItem {
    pub id: String,
    pub act: DialogueAct,
    pub reference: String,
}

/// One parsed line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Nlu(NluItem),
    Dst(DstDialogue),
    Act(ActItem),
    Nlg(NlgItem),
}

impl Record {
    pub fn id(&self) -> &str {
        match self {
            Record::Nlu(r) => &r.id,
            Record::Dst(r) => r.id(),
            Record::Act(r) => &r.id,
            Record::Nlg(r) => &r.id,
        }
    }

    /// Canonical single-line JSON; parsing it back yields an equal record.
    pub fn to_json_line(&self) -> String {
        let value = match self {
            Record::Nlu(r) => json!({
                "id": r.id,
                "text": r.text.text(),
                "intent": r.intent,
                "slots": r.slots,
            }),
            Record::Dst(r) => {
                let mut states = r.states.iter();
                let turns: Vec<Value> = r
                    .dialogue
                    .turns()
                    .iter()
                    .map(|u| match u.speaker() {
                        Speaker::User => json!({
                            "speaker": "user",
                            "text": u.text(),
                            "state": states.next().expect("one state per user turn"),
                        }),
                        Speaker::System => json!({"speaker": "system", "text": u.text()}),
                    })
                    .collect();
                json!({"dialogue_id": r.id(), "turns": turns})
            }
            Record::Act(r) => json!({
                "id": r.id,
                "system_text": r.system_text.text(),
                "acts": r.acts,
            }),
            Record::Nlg(r) => json!({
                "id": r.id,
                "act": r.act.to_string(),
                "reference": r.reference,
            }),
        };
        serde_json::to_string(&value).expect("records serialize")
    }
}

/// Slots as written in the file, in file order.
#[derive(Debug, Default)]
struct RawSlots(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for RawSlots {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawSlots;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of slot -> value")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<RawSlots, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = access.next_entry::<String, Value>()? {
                    out.push(entry);
                }
                Ok(RawSlots(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(serde_json::Number),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Text(s) => s,
            RawId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNlu {
    id: RawId,
    text: String,
    intent: String,
    #[serde(default)]
    slots: RawSlots,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker: String,
    text: String,
    #[serde(default)]
    state: Option<RawSlots>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDst {
    dialogue_id: RawId,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAct {
    id: RawId,
    system_text: String,
    acts: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNlg {
    id: RawId,
    act: String,
    reference: String,
}

/// Problems that do not reject a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// A slot carried several values; the first was kept.
    MultiValue { slot: String },
}

fn normalize_text(text: &str) -> String {
    text.trim().to_lowercase()
}

fn clean_id(id: RawId) -> Result<String, String> {
    let id = id.into_string();
    if id.trim().is_empty() {
        Err("empty id".into())
    } else {
        Ok(id)
    }
}

fn check_grammar_token(what: &str, token: &str) -> Result<(), String> {
    if token.contains(RESERVED_CHARS) {
        return Err(format!("{what} {token:?} contains one of `;()=`"));
    }
    if token.contains(['\n', '\r']) {
        return Err(format!("{what} {token:?} contains a newline"));
    }
    Ok(())
}

fn scalar_value(value: &Value) -> Result<Option<String>, String> {
    match value {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Bool(b) => Ok(Some(b.to_string())),
        other => Err(format!("unsupported slot value {other}")),
    }
}

fn normalize_slots(raw: RawSlots, warnings: &mut Vec<Warning>) -> Result<SlotValueMap, String> {
    let mut map = SlotValueMap::new();
    for (slot, value) in raw.0 {
        let slot = normalize_text(&slot);
        if slot.is_empty() {
            return Err("empty slot name".into());
        }
        check_grammar_token("slot", &slot)?;
        if map.contains(&slot) {
            return Err(format!("duplicate slot {slot:?}"));
        }
        let value = match &value {
            Value::Array(items) => {
                if items.len() > 1 {
                    warnings.push(Warning::MultiValue { slot: slot.clone() });
                }
                match items.first() {
                    Some(first) => scalar_value(first)?,
                    None => None,
                }
            }
            other => scalar_value(other)?,
        };
        let value = value.map(|v| normalize_text(&v));
        let value = value.filter(|v| !v.is_empty() && !v.eq_ignore_ascii_case("none"));
        if let Some(v) = &value {
            check_grammar_token("value", v)?;
        }
        map.set(&slot, value.as_deref()).map_err(|e| e.to_string())?;
    }
    Ok(map)
}

fn utterance(text: &str, speaker: Speaker) -> Result<Utterance, String> {
    Utterance::new(normalize_text(text), speaker).map_err(|e| e.to_string())
}

/// Parses one JSONL line for `kind`, collecting non-fatal warnings.
pub fn parse_record(kind: TaskKind, line: &str, warnings: &mut Vec<Warning>) -> Result<Record, String> {
    let err = |e: serde_json::Error| e.to_string();
    match kind {
        TaskKind::SlotFilling | TaskKind::Intent => {
            let raw: RawNlu = serde_json::from_str(line).map_err(err)?;
            let intent = normalize_text(&raw.intent);
            if intent.is_empty() {
                return Err("empty intent".into());
            }
            check_grammar_token("intent", &intent)?;
            Ok(Record::Nlu(NluItem {
                id: clean_id(raw.id)?,
                text: utterance(&raw.text, Speaker::User)?,
                intent,
                slots: normalize_slots(raw.slots, warnings)?,
            }))
        }
        TaskKind::Dst => {
            let raw: RawDst = serde_json::from_str(line).map_err(err)?;
            let mut turns = Vec::with_capacity(raw.turns.len());
            let mut states = Vec::new();
            let mut current = SlotValueMap::new();
            for (i, turn) in raw.turns.into_iter().enumerate() {
                let speaker = match turn.speaker.trim().to_lowercase().as_str() {
                    "user" => Speaker::User,
                    "system" => Speaker::System,
                    other => return Err(format!("turn {i}: unknown speaker {other:?}")),
                };
                turns.push(utterance(&turn.text, speaker).map_err(|e| format!("turn {i}: {e}"))?);
                match (speaker, turn.state) {
                    (Speaker::User, Some(raw_state)) => {
                        current = normalize_slots(raw_state, warnings)?;
                        states.push(current.clone());
                    }
                    (Speaker::User, None) => states.push(current.clone()),
                    (Speaker::System, Some(_)) => {
                        return Err(format!("turn {i}: system turns carry no state"))
                    }
                    (Speaker::System, None) => {}
                }
            }
            let dialogue = Dialogue::new(clean_id(raw.dialogue_id)?, turns).map_err(|e| e.to_string())?;
            Ok(Record::Dst(DstDialogue { dialogue, states }))
        }
        TaskKind::Act => {
            let raw: RawAct = serde_json::from_str(line).map_err(err)?;
            let mut acts = BTreeSet::new();
            for act in &raw.acts {
                let act = normalize_text(act);
                if act.is_empty() {
                    return Err("empty act label".into());
                }
                check_grammar_token("act", &act)?;
                acts.insert(act);
            }
            Ok(Record::Act(ActItem {
                id: clean_id(raw.id)?,
                system_text: utterance(&raw.system_text, Speaker::System)?,
                acts,
            }))
        }
        TaskKind::Nlg => {
            let raw: RawNlg = serde_json::from_str(line).map_err(err)?;
            let act = parse_act(&normalize_text(&raw.act)).map_err(|e| e.to_string())?;
            // drop "none" values the same way slot maps do
            let slots = act
                .slots()
                .iter()
                .filter(|(_, v)| !v.trim().eq_ignore_ascii_case("none"))
                .map(|(s, v)| (s.to_string(), v.to_string()))
                .collect::<Vec<_>>();
            let mut cleaned = SlotValueMap::new();
            for (s, v) in &slots {
                cleaned.insert(s, v).map_err(|e| e.to_string())?;
            }
            let act = DialogueAct::new(act.act(), cleaned).map_err(|e| e.to_string())?;
            let reference = normalize_text(&raw.reference);
            if reference.contains(['\n', '\r']) {
                return Err("reference contains a newline".into());
            }
            Ok(Record::Nlg(NlgItem {
                id: clean_id(raw.id)?,
                act,
                reference,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(kind: TaskKind, line: &str) -> Result<Record, String> {
        parse_record(kind, line, &mut Vec::new())
    }

    #[test]
    fn nlu_line() {
        let r = parse(
            TaskKind::Intent,
            r#"{"id":"1","text":"Add to playlist Kojak","slots":{"name":"Kojak","artist":"None","x":null},"intent":"AddToPlaylist"}"#,
        )
        .unwrap();
        let Record::Nlu(item) = r else { panic!() };
        assert_eq!(item.text.text(), "add to playlist kojak");
        assert_eq!(item.intent, "addtoplaylist");
        assert_eq!(item.slots, [("name", "kojak")].into_iter().collect());
    }

    #[test]
    fn nlu_rejects_reserved_values() {
        let e = parse(
            TaskKind::SlotFilling,
            r#"{"id":"1","text":"a","intent":"b","slots":{"name":"x;y"}}"#,
        );
        assert!(e.is_err());
        assert!(parse(TaskKind::Intent, r#"{"id":"1","text":"a\nb","intent":"b"}"#).is_err());
        assert!(parse(TaskKind::Intent, r#"{"id":"1","text":"a","intent":"b","extra":1}"#).is_err());
    }

    #[test]
    fn multi_value_is_flagged() {
        let mut w = Vec::new();
        let r = parse_record(
            TaskKind::SlotFilling,
            r#"{"id":2,"text":"a b","intent":"x","slots":{"name":["a","b"]}}"#,
            &mut w,
        )
        .unwrap();
        assert_eq!(w, vec![Warning::MultiValue { slot: "name".into() }]);
        assert_eq!(r.id(), "2");
        let Record::Nlu(item) = r else { panic!() };
        assert_eq!(item.slots.get("name"), Some("a"));
    }

    #[test]
    fn dst_line_carries_state() {
        let r = parse(
            TaskKind::Dst,
            r#"{"dialogue_id":"d1","turns":[
                {"speaker":"user","text":"a cheap place","state":{"price":"cheap"}},
                {"speaker":"system","text":"which area?"},
                {"speaker":"user","text":"thanks"},
                {"speaker":"system","text":"ok"},
                {"speaker":"user","text":"in the north","state":{"price":"cheap","area":"north"}}]}"#
                .replace('\n', " ")
                .as_str(),
        )
        .unwrap();
        let Record::Dst(d) = r else { panic!() };
        assert_eq!(d.states.len(), 3);
        assert_eq!(d.states[1], d.states[0]);
        let deltas = d.turn_deltas();
        assert_eq!(deltas[0].1, [("price", "cheap")].into_iter().collect());
        assert!(deltas[1].1.is_empty());
        assert_eq!(deltas[2].1, [("area", "north")].into_iter().collect());
    }

    #[test]
    fn dst_checks_alternation() {
        let e = parse(
            TaskKind::Dst,
            r#"{"dialogue_id":"d","turns":[{"speaker":"system","text":"hi"}]}"#,
        );
        assert!(e.is_err());
        let e = parse(
            TaskKind::Dst,
            r#"{"dialogue_id":"d","turns":[{"speaker":"user","text":"hi"},{"speaker":"system","text":"x","state":{}}]}"#,
        );
        assert!(e.is_err());
    }

    #[test]
    fn act_and_nlg_lines() {
        let Record::Act(a) = parse(
            TaskKind::Act,
            r#"{"id":"a","system_text":"What area?","acts":["Request","request"]}"#,
        )
        .unwrap() else {
            panic!()
        };
        assert_eq!(a.acts.len(), 1);
        let Record::Nlg(n) = parse(
            TaskKind::Nlg,
            r#"{"id":"n","act":"inform(name=Hilton;area=chinatown;price=none)","reference":"The hilton is near chinatown"}"#,
        )
        .unwrap() else {
            panic!()
        };
        assert_eq!(n.act.to_string(), "inform(name=hilton;area=chinatown)");
        assert!(parse(TaskKind::Nlg, r#"{"id":"n","act":"inform(","reference":"x"}"#).is_err());
    }

    #[test]
    fn canonical_lines_round_trip() {
        for (kind, line) in [
            (TaskKind::Intent, r#"{"id":"1","text":"x y","intent":"b","slots":{"s":"y","a":"x"}}"#),
            (
                TaskKind::Dst,
                r#"{"dialogue_id":"d","turns":[{"speaker":"user","text":"hi","state":{"a":"1"}},{"speaker":"system","text":"ok"}]}"#,
            ),
            (TaskKind::Act, r#"{"id":"a","system_text":"x","acts":["b","a"]}"#),
            (TaskKind::Nlg, r#"{"id":"n","act":"inform(b=1;a=2)","reference":"r"}"#),
        ] {
            let r = parse(kind, line).unwrap();
            assert_eq!(parse(kind, &r.to_json_line()).unwrap(), r);
        }
    }
}
