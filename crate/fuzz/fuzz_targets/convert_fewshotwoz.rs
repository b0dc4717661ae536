#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::convert::convert_fewshotwoz;
use tod_priming::model::TaskKind;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(conversion) = convert_fewshotwoz(text) {
        let _ = tod_priming::data::parse_records(TaskKind::Nlg, &conversion.to_jsonl()).expect("converted output loads");
    }
});
