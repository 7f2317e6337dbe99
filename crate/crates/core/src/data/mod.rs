//! Cohort schema and file formats, standardization, synthetic cohorts and
//! cross-validation splits.

mod cohort;
mod manifest;
mod split;
mod standardize;
mod synthetic;

pub use cohort::{load_cohort, Cohort, Record, Subject};
pub use manifest::Manifest;
pub use split::{make_splits, SplitPlan};
pub use standardize::{standardization_stats, ModalityStats, NormStats, STD_FLOOR};
pub use synthetic::{
    generate_synthetic, reference_retention, GroundTruth, SyntheticSpec, SEVERITY_JITTER,
};
