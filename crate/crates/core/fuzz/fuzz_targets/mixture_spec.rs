#![no_main]

use libfuzzer_sys::fuzz_target;
use zsvid::denoisers::{MixtureModel, MixtureSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<MixtureSpec>(data) else { return };
    if let Ok(m) = MixtureModel::from_spec(&spec) {
        assert_eq!(MixtureModel::from_spec(&m.to_spec()).unwrap(), m);
    }
});
