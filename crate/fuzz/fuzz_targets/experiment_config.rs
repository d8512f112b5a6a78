#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = hompinn::config::ExperimentConfig::from_json(text) {
            // resolution may reject values but must not panic
            let _ = cfg.resolve();
        }
    }
});
