#![no_main]

use libfuzzer_sys::fuzz_target;
use ordimpute::data::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::from_json(data) {
        let back = Manifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
    }
});
