#![no_main]

use libfuzzer_sys::fuzz_target;
use richpref::formats::{pool_from_str, pool_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pool) = pool_from_str(text) {
        let again = pool_from_str(&pool_to_string(&pool)).expect("written pool parses");
        assert_eq!(pool, again);
    }
});
