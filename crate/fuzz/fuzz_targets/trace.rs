#![no_main]

use libfuzzer_sys::fuzz_target;
use pmflow::trace_io::{decode_trace, encode_trace};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_trace(data) {
        assert_eq!(encode_trace(&t).unwrap(), data);
    }
});
