#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref::formats::{belief_from_str, belief_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(b) = belief_from_str(text) {
        let again = belief_from_str(&belief_to_string(&b)).expect("written belief parses");
        assert_eq!(b, again);
    }
});
