#![no_main]

use libfuzzer_sys::fuzz_target;
use zsvid::harness::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(mut config) = RunConfig::from_json(text) else { return };
    // Keep the target hermetic.
    config.mask_dir = None;
    if let Ok(g) = config.to_generation() {
        let _ = g.hash();
    }
});
