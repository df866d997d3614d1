#![no_main]

use facetkit_core::study::StudyConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = StudyConfig::from_toml(text) {
        let _ = cfg.validate();
        let _ = cfg.ensemble_specs();
    }
});
