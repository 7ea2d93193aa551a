#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref::formats::{environments_to_string, parse_environments};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(envs) = parse_environments(text) {
        let again = parse_environments(&environments_to_string(&envs)).expect("written environments parse");
        assert_eq!(envs, again);
    }
});
