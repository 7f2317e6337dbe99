#![no_main]

use libfuzzer_sys::fuzz_target;
use ordimpute::data::{Cohort, Manifest, Subject};
use ordimpute::imputation::ImputedCohort;

fuzz_target!(|data: &[u8]| {
    let manifest = Manifest { num_rois: 2, ..Manifest::default() };
    let subjects = ["a", "b"]
        .iter()
        .map(|id| Subject {
            id: id.to_string(),
            label: 0,
            features: vec![Some(vec![0.0, 1.0]); 4],
        })
        .collect();
    let cohort = Cohort::new(manifest, subjects).unwrap();
    if let Ok(imputed) = ImputedCohort::from_provenance_reader(cohort.clone(), data) {
        let mut buf = Vec::new();
        imputed.write_provenance_csv(&mut buf).unwrap();
        let back = ImputedCohort::from_provenance_reader(cohort, buf.as_slice()).unwrap();
        assert_eq!(back, imputed);
    }
});
