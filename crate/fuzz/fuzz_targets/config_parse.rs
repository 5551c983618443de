#![no_main]

use libfuzzer_sys::fuzz_target;
use predfuse::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::from_toml_str(text) {
            let echo = config.to_toml_string().expect("parsed config serializes");
            ExperimentConfig::from_toml_str(&echo).expect("serialized config parses");
        }
    }
});
