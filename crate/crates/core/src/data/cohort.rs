//! Subjects, their ordinal labels and per-modality ROI vectors, plus the
//! long-format CSV encoding: one row per observed (subject, modality), an
//! absent row meaning the modality is missing.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub label: usize,
    /// Indexed by modality id; `None` marks a missing modality.
    pub features: Vec<Option<Vec<f64>>>,
}

impl Subject {
    pub fn is_complete(&self) -> bool {
        self.features.iter().all(Option::is_some)
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.features
            .iter()
            .enumerate()
            .filter_map(|(m, f)| f.as_deref().map(|v| (m, v)))
    }

    pub fn missing(&self) -> impl Iterator<Item = usize> + '_ {
        self.features
            .iter()
            .enumerate()
            .filter_map(|(m, f)| f.is_none().then_some(m))
    }
}

/// One observed (subject, modality) vector.
#[derive(Clone, Copy, Debug)]
pub struct Record<'a> {
    pub subject: usize,
    pub modality: usize,
    pub label: usize,
    pub values: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    manifest: Manifest,
    subjects: Vec<Subject>,
}

impl Cohort {
    pub fn new(manifest: Manifest, subjects: Vec<Subject>) -> Result<Self> {
        manifest.validate()?;
        let cohort = Cohort { manifest, subjects };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, q, v) = (
            self.manifest.num_modalities(),
            self.manifest.num_rois,
            self.manifest.num_labels(),
        );
        let mut ids = HashMap::new();
        for subj in &self.subjects {
            if ids.insert(subj.id.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate subject `{}`", subj.id)));
            }
            if subj.label >= v {
                return Err(Error::Label(format!(
                    "subject `{}` has label {} outside 0..{v}",
                    subj.id, subj.label
                )));
            }
            if subj.features.len() != s {
                return Err(Error::Schema(format!(
                    "subject `{}` has {} modality slots, expected {s}",
                    subj.id,
                    subj.features.len()
                )));
            }
            if subj.observed().next().is_none() {
                return Err(Error::Schema(format!(
                    "subject `{}` has no observed modality",
                    subj.id
                )));
            }
            for (m, f) in subj.observed() {
                if f.len() != q {
                    return Err(Error::Schema(format!(
                        "subject `{}` {} has {} values, expected {q}",
                        subj.id,
                        self.manifest.modalities[m],
                        f.len()
                    )));
                }
                if f.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "subject `{}` {}",
                        subj.id, self.manifest.modalities[m]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<Subject> {
        self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    /// Count of missing (subject, modality) entries.
    pub fn num_missing(&self) -> usize {
        self.subjects.iter().map(|s| s.missing().count()).sum()
    }

    pub fn num_records(&self) -> usize {
        self.subjects.iter().map(|s| s.observed().count()).sum()
    }

    /// Observed vectors per modality.
    pub fn modality_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.manifest.num_modalities()];
        for s in &self.subjects {
            for (m, _) in s.observed() {
                counts[m] += 1;
            }
        }
        counts
    }

    /// Observed records in subject order, modalities in manifest order.
    pub fn records(&self) -> impl Iterator<Item = Record<'_>> + '_ {
        self.subjects.iter().enumerate().flat_map(|(i, s)| {
            s.observed().map(move |(m, values)| Record {
                subject: i,
                modality: m,
                label: s.label,
                values,
            })
        })
    }

    pub fn complete_subjects(&self) -> Vec<usize> {
        (0..self.subjects.len())
            .filter(|&i| self.subjects[i].is_complete())
            .collect()
    }

    pub fn incomplete_subjects(&self) -> Vec<usize> {
        (0..self.subjects.len())
            .filter(|&i| !self.subjects[i].is_complete())
            .collect()
    }

    /// A cohort restricted to the given subject indices (in that order).
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            manifest: self.manifest.clone(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Parses the long-format CSV. Rows of one subject need not be
    /// contiguous; subjects keep the order of their first row.
    pub fn from_csv_reader<R: Read>(reader: R, manifest: &Manifest) -> Result<Self> {
        manifest.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let expected = manifest.csv_header();
        let mut rows = rdr.records();

        let header = match rows.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
            Some(h) => h.map_err(csv_error)?,
        };
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "header does not match manifest (expected {} columns: subject_id,label,modality,q_0..q_{})",
                    expected.len(),
                    manifest.num_rois - 1
                ),
            });
        }

        let (s, q) = (manifest.num_modalities(), manifest.num_rois);
        let mut subjects: Vec<Subject> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for row in rows {
            let row = row.map_err(csv_error)?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |msg: String| Error::Parse { line, msg };
            if row.len() != expected.len() {
                return Err(err(format!(
                    "expected {} columns, found {}",
                    expected.len(),
                    row.len()
                )));
            }
            let id = &row[0];
            if id.is_empty() {
                return Err(err("empty subject_id".into()));
            }
            let label = manifest
                .label_index(&row[1])
                .ok_or_else(|| err(format!("unknown label `{}`", &row[1])))?;
            let modality = manifest
                .modality_index(&row[2])
                .ok_or_else(|| err(format!("unknown modality `{}`", &row[2])))?;
            let mut values = Vec::with_capacity(q);
            for (c, cell) in row.iter().skip(3).enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("non-numeric value `{cell}` in q_{c}")))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite value `{cell}` in q_{c}")));
                }
                values.push(v);
            }
            let slot = match index.get(id) {
                Some(&i) => i,
                None => {
                    index.insert(id.to_string(), subjects.len());
                    subjects.push(Subject {
                        id: id.to_string(),
                        label,
                        features: vec![None; s],
                    });
                    subjects.len() - 1
                }
            };
            let subj = &mut subjects[slot];
            if subj.label != label {
                return Err(err(format!("subject `{id}` has conflicting labels")));
            }
            if subj.features[modality].is_some() {
                return Err(err(format!(
                    "duplicate row for subject `{id}` modality `{}`",
                    manifest.modalities[modality]
                )));
            }
            subj.features[modality] = Some(values);
        }
        Cohort::new(manifest.clone(), subjects)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.manifest.csv_header())
            .map_err(csv_error)?;
        let mut row: Vec<String> = Vec::with_capacity(3 + self.manifest.num_rois);
        for subj in &self.subjects {
            for (m, values) in subj.observed() {
                row.clear();
                row.push(subj.id.clone());
                row.push(self.manifest.labels[subj.label].clone());
                row.push(self.manifest.modalities[m].clone());
                row.extend(values.iter().map(|v| format!("{v:?}")));
                w.write_record(&row).map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a features CSV together with its manifest JSON.
pub fn load_cohort(features_path: &Path, manifest_path: &Path) -> Result<Cohort> {
    let manifest = Manifest::load(manifest_path)?;
    let f = std::fs::File::open(features_path)?;
    Cohort::from_csv_reader(std::io::BufReader::new(f), &manifest)
}
