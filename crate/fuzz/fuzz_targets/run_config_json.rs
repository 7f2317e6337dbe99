#![no_main]

use libfuzzer_sys::fuzz_target;
use ordimpute_cli::config::{Overrides, RunConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = RunConfig::from_json(data) {
        if let Ok(resolved) = config.resolve(&Overrides::default()) {
            let back = RunConfig::from_json(&resolved.to_json()).unwrap();
            assert_eq!(back, resolved);
            let _ = resolved.synthetic.to_spec(resolved.seed);
        }
    }
});
