#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::backend::CompletionResponse;
use tod_priming::prefix::PromptStyle;
use tod_priming::runner::{parse_binary, parse_value};

fuzz_target!(|data: &[u8]| {
    let Ok(response) = serde_json::from_slice::<CompletionResponse>(data) else { return };
    let style = PromptStyle::default();
    let verdict = parse_binary(&response, &style);
    assert!(!verdict.score.is_nan());
    if let Some(value) = parse_value(&response, &style) {
        assert!(!value.is_empty());
        assert!(!value.contains('\n'));
    }
});
