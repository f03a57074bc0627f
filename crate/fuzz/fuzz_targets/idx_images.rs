#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = cwc_core::data::parse_idx_images(data) {
        assert_eq!(images.pixels.len(), images.count * images.rows * images.cols);
    }
});
