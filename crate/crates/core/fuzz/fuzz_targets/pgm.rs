#![no_main]

use libfuzzer_sys::fuzz_target;
use zsvid::harness::io::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(px) = decode_pgm(data) {
        assert_eq!(decode_pgm(&encode_pgm(&px)).unwrap(), px);
    }
});
