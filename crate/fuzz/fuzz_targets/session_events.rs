#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref_service::parse_events;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = parse_events(text) {
        let written: String = events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        assert_eq!(parse_events(&written).expect("written events parse"), events);
    }
});
