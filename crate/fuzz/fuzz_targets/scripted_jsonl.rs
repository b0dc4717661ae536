#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::backend::ScriptedBackend;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ScriptedBackend::parse_jsonl(text);
    }
});
