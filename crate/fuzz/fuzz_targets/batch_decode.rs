#![no_main]

use libfuzzer_sys::fuzz_target;
use predfuse::datagen::{decode_batch, encode_batch};

fuzz_target!(|data: &[u8]| {
    if let Ok(first) = decode_batch(data) {
        // bytes, not values: NaN payloads are legal and never compare equal
        let once = encode_batch(&first).expect("decoded batch re-encodes");
        let second = decode_batch(&once).expect("re-encoded batch decodes");
        assert_eq!(encode_batch(&second).expect("stable encoding"), once);
    }
});
