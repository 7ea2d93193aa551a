//! Request and event-log parsers: seeds parse, arbitrary text never panics.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use richpref_service::parse_events;
use richpref_service::wire::{
    parse_answer_payload, parse_create_session, parse_vote, MAX_BODY_BYTES,
};

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let out: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty());
    out
}

#[test]
fn seeds_parse() {
    for s in seeds("answer_payload") {
        parse_answer_payload(&s).unwrap();
    }
    for s in seeds("create_session") {
        parse_create_session(&s).unwrap();
    }
    for s in seeds("vote") {
        parse_vote(&s).unwrap();
    }
    for s in seeds("session_events") {
        let events = parse_events(&s).unwrap();
        let written: String = events
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        assert_eq!(written, s);
    }
}

#[test]
fn oversized_bodies_are_rejected() {
    let pad = " ".repeat(MAX_BODY_BYTES + 1);
    assert!(parse_vote(&format!(r#"{{"env_index": 0, "choice": "first"}}{pad}"#)).is_err());
}

proptest! {
    #[test]
    fn arbitrary_text(s in ".{0,300}") {
        let _ = parse_answer_payload(&s);
        let _ = parse_create_session(&s);
        let _ = parse_vote(&s);
        let _ = parse_events(&s);
    }

    #[test]
    fn event_lines_with_edits(cut in 0usize..2000, c in any::<char>()) {
        let s = &seeds("session_events")[0];
        let mut chars: Vec<char> = s.chars().collect();
        let i = cut % chars.len();
        chars[i] = c;
        let text: String = chars.into_iter().collect();
        if let Ok(events) = parse_events(&text) {
            let written: String = events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
            prop_assert_eq!(parse_events(&written).unwrap(), events);
        }
    }
}
