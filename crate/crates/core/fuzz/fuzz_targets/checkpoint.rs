#![no_main]
//! Input: model.json text, a 0x00 byte, then params.bin.
use beampred::nn::checkpoint::{decode_checkpoint, parse_model_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some(i) = data.iter().position(|b| *b == 0) else { return };
    let Ok(text) = std::str::from_utf8(&data[..i]) else { return };
    if let Ok(meta) = parse_model_file(text) {
        let _ = decode_checkpoint(&meta, &data[i + 1..]);
    }
});
