#![no_main]

use claimattn::Model;
use libfuzzer_sys::fuzz_target;

// Input layout: 4-byte little-endian manifest length, manifest text, blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let n = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
    let rest = &data[4..];
    if n > rest.len() {
        return;
    }
    let Ok(manifest) = std::str::from_utf8(&rest[..n]) else { return };
    if let Ok(model) = Model::from_parts(manifest, &rest[n..]) {
        let (m, b) = model.to_parts();
        assert!(Model::from_parts(&m, &b).is_ok());
    }
});
