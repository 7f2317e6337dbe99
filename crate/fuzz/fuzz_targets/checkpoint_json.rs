#![no_main]

use libfuzzer_sys::fuzz_target;
use ordimpute::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_json(data, None) {
        let bytes = ckpt.to_json().unwrap();
        assert_eq!(Checkpoint::from_json(&bytes, None).unwrap(), ckpt);
    }
});
