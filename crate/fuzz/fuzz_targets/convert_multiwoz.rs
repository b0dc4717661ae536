#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::convert::convert_multiwoz;
use tod_priming::model::TaskKind;

fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let kind = if tag % 2 == 0 { TaskKind::Dst } else { TaskKind::Act };
    if let Ok(conversion) = convert_multiwoz(text, kind) {
        let _ = tod_priming::data::parse_records(kind, &conversion.to_jsonl()).expect("converted output loads");
    }
});
