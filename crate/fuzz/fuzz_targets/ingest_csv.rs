#![no_main]

use facetkit_core::ratings::{ingest_reader, IngestOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = ingest_reader(data, IngestOptions::default()) else {
        return;
    };
    // writing and re-reading keeps every cell, though facet order may change
    // when the first rows do not list every id
    let opts = IngestOptions {
        scale_min: Some(t.scale().min_score()),
        scale_max: Some(t.scale().max_score()),
    };
    let back = ingest_reader(t.to_csv_string().as_bytes(), opts).expect("re-ingest");
    assert_eq!(back.dims(), t.dims());
    assert_eq!(back.len(), t.len());
    assert_eq!(back.missing_count(), t.missing_count());
});
