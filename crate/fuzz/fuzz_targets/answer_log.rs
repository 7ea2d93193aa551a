#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref::formats::{answer_log_from_str, answer_log_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = answer_log_from_str(text) {
        let again = answer_log_from_str(&answer_log_to_string(&log)).expect("written log parses");
        assert_eq!(log, again);
    }
});
