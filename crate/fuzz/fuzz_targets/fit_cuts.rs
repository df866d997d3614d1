#![no_main]

use facetkit_core::fit::FitCuts;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cuts) = FitCuts::parse(text) {
        assert!(cuts.lower < cuts.upper);
        assert!(cuts.lower.is_finite() && cuts.upper.is_finite());
    }
});
