#![no_main]

use libfuzzer_sys::fuzz_target;
use pmflow::surrogate::checkpoint::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&s).unwrap(), data);
    }
});
