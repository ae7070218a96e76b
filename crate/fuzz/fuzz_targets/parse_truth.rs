//! Ground-truth files feed the report pipeline; parsing must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wlanprobe::sim::load_truth;

fuzz_target!(|data: &[u8]| {
    let _ = load_truth(data);
});
