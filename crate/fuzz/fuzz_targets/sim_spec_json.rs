#![no_main]

use facetkit_core::simulate::{simulate, SimSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<SimSpec>(data) else {
        return;
    };
    if spec.validate().is_err() {
        return;
    }
    // keep each run cheap
    let cells = spec.n_persons * spec.n_items * spec.n_raters;
    if cells <= 4096 {
        if let Ok((t, params)) = simulate(&spec) {
            assert_eq!(t.len(), cells);
            assert_eq!(params.theta.len(), spec.n_persons);
        }
    }
});
