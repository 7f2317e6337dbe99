#![no_main]

use libfuzzer_sys::fuzz_target;
use ordimpute::data::{Cohort, Manifest};

fuzz_target!(|data: &[u8]| {
    let manifest = Manifest { num_rois: 3, ..Manifest::default() };
    if let Ok(cohort) = Cohort::from_csv_reader(data, &manifest) {
        // Anything accepted must survive a write/read cycle unchanged.
        let mut buf = Vec::new();
        cohort.write_csv(&mut buf).unwrap();
        let back = Cohort::from_csv_reader(buf.as_slice(), &manifest).unwrap();
        assert_eq!(back, cohort);
    }
});
