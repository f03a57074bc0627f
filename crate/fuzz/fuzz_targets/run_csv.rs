#![no_main]

use cwc_core::harness::{csv_string, parse_run_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = parse_run_csv(text) {
        let again = parse_run_csv(&csv_string(&log)).expect("written CSV re-parses");
        assert_eq!(again.len(), log.len());
    }
});
