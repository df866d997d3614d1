#![no_main]

use facetkit_core::idlist::{parse_id_list, parse_named_group, MAX_RANGE};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ids) = parse_id_list(text) {
        let tokens = text.split(',').count() as u64;
        assert!(ids.len() as u64 <= tokens * MAX_RANGE);
        assert!(ids.iter().all(|id| !id.is_empty()));
    }
    let _ = parse_named_group(text);
});
