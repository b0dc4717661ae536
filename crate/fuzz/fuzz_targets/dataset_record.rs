#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::data::parse_record;
use tod_priming::model::TaskKind;

// First byte picks the task, the rest is one JSONL line.
fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else { return };
    let Ok(line) = std::str::from_utf8(rest) else { return };
    let kind = TaskKind::ALL[tag as usize % TaskKind::ALL.len()];
    let mut warnings = Vec::new();
    if let Ok(record) = parse_record(kind, line, &mut warnings) {
        let canonical = record.to_json_line();
        let again = parse_record(kind, &canonical, &mut Vec::new()).expect("canonical line reparses");
        assert_eq!(record, again);
    }
});
