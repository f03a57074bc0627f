#![no_main]

use cwc_core::harness::parse_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cp) = parse_checkpoint(text) {
        let again = parse_checkpoint(&cp.to_json()).expect("written checkpoint re-parses");
        assert_eq!(again, cp);
    }
});
