#![no_main]

use cwc_core::harness::{parse_config_text, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_config_text(text);
    if let Ok(cfg) = ExperimentConfig::from_text(text, &[]) {
        let echo = cfg.echo();
        let again = ExperimentConfig::from_text(&echo, &[]).expect("echo re-parses");
        assert_eq!(again.echo(), echo);
    }
});
