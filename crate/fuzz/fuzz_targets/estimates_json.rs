#![no_main]

use facetkit_core::FacetEstimates;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(est) = FacetEstimates::from_json(text) {
        let back = FacetEstimates::from_json(&est.to_json().unwrap()).unwrap();
        assert_eq!(back, est);
    }
});
