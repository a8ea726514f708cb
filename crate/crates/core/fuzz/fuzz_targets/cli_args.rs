#![no_main]

use libfuzzer_sys::fuzz_target;
use zsvid::harness::cli::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let argv = std::iter::once("zsvid").chain(text.split('\0'));
    let _ = parse_config(argv);
});
