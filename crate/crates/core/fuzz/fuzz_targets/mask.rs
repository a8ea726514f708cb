#![no_main]

use libfuzzer_sys::fuzz_target;
use zsvid::harness::io::decode_mask;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask(data) {
        let (h, w) = mask.shape();
        assert!(mask.count() <= h * w);
    }
});
