#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_json(text) {
        if config.validate().is_ok() {
            for &k in &config.shots {
                let _ = config.budget_for(k);
            }
        }
    }
});
