//! Multi-modal feature imputation for cohorts with ordinal, progressive
//! labels.
//!
//! A shared encoder maps each modality's ROI vector to a unit embedding
//! trained with an ordinal contrastive loss (label-distance–scaled
//! temperatures), a modality-coherence term and a gradient-reversed modality
//! classifier. A decoder conditioned on a one-hot target modality then
//! translates any observed modality into the missing ones.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod imputation;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
