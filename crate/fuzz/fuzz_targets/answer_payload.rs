#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref_service::wire::parse_answer_payload;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_answer_payload(text);
    }
});
