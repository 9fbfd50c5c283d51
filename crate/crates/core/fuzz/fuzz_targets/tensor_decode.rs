#![no_main]
use beampred::tensor::{decode_all, encode_all};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_all(data) {
        assert_eq!(decode_all(&encode_all(&tensors)).unwrap(), tensors);
    }
});
