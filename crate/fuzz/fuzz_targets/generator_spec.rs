#![no_main]

use claimattn::data::generate_dataset;
use claimattn::GeneratorSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mut spec) = GeneratorSpec::from_json(text) {
        // keep generation cheap; the parser and validation are the target
        spec.n_claims = spec.n_claims.min(20);
        let _ = generate_dataset(&spec);
    }
});
