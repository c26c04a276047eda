#![no_main]

use claimattn::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::read_jsonl(data) {
        let back = Dataset::read_jsonl(&ds.to_jsonl()[..]).expect("re-parse");
        assert_eq!(back.checksum(), ds.checksum());
    }
});
