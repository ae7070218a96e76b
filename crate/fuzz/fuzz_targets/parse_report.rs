//! `report` aggregates diagnosis JSON from disk; parsing must never panic
//! and accepted reports must reserialize.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wlanprobe::diagnose::Diagnosis;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = serde_json::from_str::<Diagnosis>(text) {
        // Non-finite floats cannot appear in JSON input, so this must work.
        let _ = serde_json::to_string(&report).expect("parsed report reserializes");
    }
});
