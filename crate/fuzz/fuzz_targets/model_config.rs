#![no_main]

use claimattn::{Model, ModelConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ModelConfig::from_json(text) {
        if cfg.d_model <= 64 && cfg.fc_width <= 64 && cfg.code_vocab <= 4096 {
            let _ = Model::build(cfg);
        }
    }
});
