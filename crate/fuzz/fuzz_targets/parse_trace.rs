//! Trace files are untrusted input to `diagnose`: parsing must never panic,
//! and anything that parses must survive a save/load round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wlanprobe::trace::{load_trace, save_trace};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = load_trace(data) {
        let mut buf = Vec::new();
        save_trace(&trace, &mut buf).expect("in-memory save succeeds");
        let reloaded = load_trace(buf.as_slice()).expect("saved trace reloads");
        assert_eq!(trace, reloaded);
    }
});
