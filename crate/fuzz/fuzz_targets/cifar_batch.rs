#![no_main]

use cwc_core::data::{parse_cifar10_batch, CIFAR_RECORD_LEN};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = parse_cifar10_batch(data) {
        assert_eq!(set.len() * CIFAR_RECORD_LEN, data.len());
        assert!(set.labels().iter().all(|&l| l < 10));
    }
});
