#![no_main]

use libfuzzer_sys::fuzz_target;
use tod_priming::model::{parse_act, serialize_act};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(act) = parse_act(text) {
        let again = parse_act(&serialize_act(&act)).expect("serialized act reparses");
        assert_eq!(act, again);
    }
});
