use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-modality, per-ROI standardization statistics, indexed by modality id.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    per_modality: Vec<ModalityStats>,
}

impl NormStats {
    pub fn new(per_modality: Vec<ModalityStats>) -> Result<Self> {
        let Some(first) = per_modality.first() else {
            return Err(Error::Stats("no modalities".into()));
        };
        let q = first.mean.len();
        for (m, s) in per_modality.iter().enumerate() {
            if s.mean.len() != q || s.std.len() != q {
                return Err(Error::Stats(format!("modality {m} has inconsistent width")));
            }
            if s.mean.iter().any(|v| !v.is_finite())
                || s.std.iter().any(|v| !v.is_finite() || *v <= 0.0)
            {
                return Err(Error::Stats(format!(
                    "modality {m} has non-finite mean or non-positive std"
                )));
            }
        }
        Ok(NormStats { per_modality })
    }

    pub fn num_modalities(&self) -> usize {
        self.per_modality.len()
    }

    pub fn num_rois(&self) -> usize {
        self.per_modality[0].mean.len()
    }

    pub fn get(&self, modality: usize) -> &ModalityStats {
        &self.per_modality[modality]
    }

    fn checked(&self, modality: usize, len: usize) -> Result<&ModalityStats> {
        let s = self
            .per_modality
            .get(modality)
            .ok_or_else(|| Error::Stats(format!("no statistics for modality {modality}")))?;
        if len != s.mean.len() {
            return Err(Error::Stats(format!(
                "vector of length {len}, statistics have {}",
                s.mean.len()
            )));
        }
        Ok(s)
    }

    pub fn standardize(&self, modality: usize, raw: &[f64]) -> Result<Vec<f64>> {
        let s = self.checked(modality, raw.len())?;
        Ok(raw
            .iter()
            .zip(&s.mean)
            .zip(&s.std)
            .map(|((x, mu), sd)| (x - mu) / sd)
            .collect())
    }

    pub fn destandardize(&self, modality: usize, z: &[f64]) -> Result<Vec<f64>> {
        let s = self.checked(modality, z.len())?;
        Ok(z.iter()
            .zip(&s.mean)
            .zip(&s.std)
            .map(|((x, mu), sd)| x * sd + mu)
            .collect())
    }
}

/// Mean and sample standard deviation (n-1) of every ROI over the present
/// vectors of `train_subjects` only.
pub fn standardization_stats(cohort: &Cohort, train_subjects: &[usize]) -> Result<NormStats> {
    let manifest = cohort.manifest();
    let q = manifest.num_rois;
    let mut out = Vec::with_capacity(manifest.num_modalities());
    for (m, name) in manifest.modalities.iter().enumerate() {
        let rows: Vec<&[f64]> = train_subjects
            .iter()
            .filter_map(|&i| cohort.subjects()[i].features[m].as_deref())
            .collect();
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "modality `{name}` has {} training observations, need at least 2",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; q];
        for r in &rows {
            for (acc, v) in mean.iter_mut().zip(*r) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; q];
        for r in &rows {
            for ((acc, v), mu) in var.iter_mut().zip(*r).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / (n - 1.0)).sqrt().max(STD_FLOOR))
            .collect();
        out.push(ModalityStats { mean, std });
    }
    NormStats::new(out)
}
