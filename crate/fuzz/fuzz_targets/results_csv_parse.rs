#![no_main]

use cunet::evaluation::{parse_results_csv, write_results_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_results_csv(text) {
        let written = write_results_csv(&rows).unwrap();
        let back = parse_results_csv(&written).unwrap();
        assert_eq!(back.len(), rows.len());
    }
});
