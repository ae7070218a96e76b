//! Probe datagrams arrive from the network: the decoder must reject short
//! input with an error, never panic, and round-trip every valid header.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wlanprobe::wire::{decode_probe, encode_probe};

fuzz_target!(|data: &[u8]| {
    if let Ok(payload) = decode_probe(data) {
        let reencoded = encode_probe(payload, data.len()).expect("valid length re-encodes");
        let redecoded = decode_probe(&reencoded).expect("re-encoded header decodes");
        assert_eq!(payload, redecoded);
    }
});
