#![no_main]

use libfuzzer_sys::fuzz_target;
use pmflow::field_io::{decode_field, encode_field};

fuzz_target!(|data: &[u8]| {
    if let Ok((nx, ny, f)) = decode_field(data) {
        assert_eq!(encode_field(nx, ny, &f).unwrap(), data);
    }
});
