#![no_main]

use claimattn::Claim;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(claim) = Claim::from_json(text) {
        // anything accepted must survive a round trip unchanged
        let back = Claim::from_json(&claim.to_json()).expect("re-parse");
        assert_eq!(back, claim);
    }
});
