#![no_main]

use libfuzzer_sys::fuzz_target;
use predfuse::datagen::decode_batch_header;

fuzz_target!(|data: &[u8]| {
    let _ = decode_batch_header(data);
});
