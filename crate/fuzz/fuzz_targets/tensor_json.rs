#![no_main]

use facetkit_core::RatingsTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = RatingsTensor::from_json(text) {
        let back = RatingsTensor::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
});
