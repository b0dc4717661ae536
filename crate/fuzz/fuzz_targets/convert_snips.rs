#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::convert::convert_snips_tsv;
use tod_priming::model::TaskKind;

fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let kind = if tag % 2 == 0 { TaskKind::SlotFilling } else { TaskKind::Intent };
    if let Ok(conversion) = convert_snips_tsv(text, kind) {
        let _ = tod_priming::data::parse_records(kind, &conversion.to_jsonl()).expect("converted output loads");
    }
});
