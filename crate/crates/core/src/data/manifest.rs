use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Names and sizes shared by every artifact of one cohort. Both lists are in
/// severity / canonical order; indices into them are the modality ids and
/// labels used throughout the crate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub modalities: Vec<String>,
    pub num_rois: usize,
    pub labels: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            modalities: ["CT", "TAU", "FDG", "AMY"].map(String::from).to_vec(),
            num_rois: 160,
            labels: ["CN", "EMCI", "LMCI", "AD"].map(String::from).to_vec(),
        }
    }
}

impl Manifest {
    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.len() < 2 {
            return Err(Error::Schema("manifest needs at least 2 modalities".into()));
        }
        if self.labels.len() < 2 {
            return Err(Error::Schema("manifest needs at least 2 labels".into()));
        }
        if self.num_rois == 0 {
            return Err(Error::Schema("manifest needs at least 1 ROI".into()));
        }
        for (what, names) in [("modality", &self.modalities), ("label", &self.labels)] {
            let mut seen = HashSet::new();
            for n in names {
                if n.is_empty() || n.contains([',', '\n', '\r', '"', ';']) {
                    return Err(Error::Schema(format!("invalid {what} name {n:?}")));
                }
                if !seen.insert(n) {
                    return Err(Error::Schema(format!("duplicate {what} name `{n}`")));
                }
            }
        }
        Ok(())
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m == name)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    /// Hex SHA-256 of the canonical (compact, field-ordered) JSON encoding.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Header of the long-format features CSV.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["subject_id".to_string(), "label".into(), "modality".into()];
        h.extend((0..self.num_rois).map(|q| format!("q_{q}")));
        h
    }
}
