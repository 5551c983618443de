#![no_main]

use libfuzzer_sys::fuzz_target;
use predfuse::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(first) = decode_checkpoint(data) {
        // bytes, not values: NaN payloads are legal and never compare equal
        let once = encode_checkpoint(&first).expect("decoded model re-encodes");
        let second = decode_checkpoint(&once).expect("re-encoded model decodes");
        assert_eq!(encode_checkpoint(&second).expect("stable encoding"), once);
    }
});
