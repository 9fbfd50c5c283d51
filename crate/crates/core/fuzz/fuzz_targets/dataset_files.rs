#![no_main]
//! Input: four sections separated by 0xFF 0x00 0xFF 0x00 (manifest, features,
//! labels, meta).
use beampred::dataset::{decode_tensors, parse_manifest};
use libfuzzer_sys::fuzz_target;

const SEP: [u8; 4] = [0xff, 0x00, 0xff, 0x00];

fn split(data: &[u8]) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let mut rest = data;
    while let Some(i) = rest.windows(4).position(|w| w == SEP) {
        out.push(&rest[..i]);
        rest = &rest[i + 4..];
    }
    out.push(rest);
    out
}

fuzz_target!(|data: &[u8]| {
    let parts = split(data);
    if parts.len() != 4 {
        return;
    }
    let Ok(text) = std::str::from_utf8(parts[0]) else { return };
    if let Ok(manifest) = parse_manifest(text) {
        let _ = decode_tensors(&manifest, parts[1], parts[2], parts[3]);
    }
});
