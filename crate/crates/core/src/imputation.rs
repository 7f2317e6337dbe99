//! Filling every missing (subject, modality) entry, either through the
//! trained encoder/decoder pair or with per-label mean vectors.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::model::{DecoderModel, EncoderModel};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Observed,
    /// Decoded from the fused embedding of these source modalities.
    Imputed(Vec<usize>),
    ClassMean,
}

impl Provenance {
    pub fn status(&self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Imputed(_) => "imputed",
            Provenance::ClassMean => "class_mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputedCohort {
    pub cohort: Cohort,
    /// `provenance[subject][modality]`
    pub provenance: Vec<Vec<Provenance>>,
}

impl ImputedCohort {
    pub fn num_filled(&self) -> usize {
        self.provenance
            .iter()
            .flatten()
            .filter(|p| **p != Provenance::Observed)
            .count()
    }

    /// CSV with columns `subject_id,modality,status,sources`; sources are
    /// `;`-separated modality names.
    pub fn write_provenance_csv<W: Write>(&self, w: W) -> Result<()> {
        let manifest = self.cohort.manifest();
        let mut w = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["subject_id", "modality", "status", "sources"])
            .map_err(io)?;
        for (subj, prov) in self.cohort.subjects().iter().zip(&self.provenance) {
            for (m, p) in prov.iter().enumerate() {
                let sources = match p {
                    Provenance::Imputed(src) => src
                        .iter()
                        .map(|&s| manifest.modalities[s].as_str())
                        .collect::<Vec<_>>()
                        .join(";"),
                    _ => String::new(),
                };
                w.write_record([
                    subj.id.as_str(),
                    manifest.modalities[m].as_str(),
                    p.status(),
                    sources.as_str(),
                ])
                .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_provenance_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_provenance_csv(std::io::BufWriter::new(f))
    }

    /// Pairs an imputed features table with its provenance table. Every
    /// (subject, modality) of `cohort` needs exactly one provenance row.
    pub fn from_provenance_reader<R: Read>(cohort: Cohort, provenance: R) -> Result<Self> {
        let manifest = cohort.manifest().clone();
        let index: HashMap<&str, usize> = cohort
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let s = manifest.num_modalities();
        let mut table: Vec<Vec<Option<Provenance>>> = vec![vec![None; s]; cohort.len()];
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(provenance);
        let mut rows = rdr.records();
        let parse = |line: u64, msg: String| Error::Parse { line, msg };
        match rows.next() {
            Some(Ok(h)) if h.iter().eq(["subject_id", "modality", "status", "sources"]) => {}
            Some(Err(e)) => return Err(parse(1, e.to_string())),
            _ => {
                return Err(parse(
                    1,
                    "expected header subject_id,modality,status,sources".into(),
                ))
            }
        }
        for row in rows {
            let row =
                row.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != 4 {
                return Err(parse(
                    line,
                    format!("expected 4 columns, found {}", row.len()),
                ));
            }
            let &k = index
                .get(&row[0])
                .ok_or_else(|| parse(line, format!("unknown subject `{}`", &row[0])))?;
            let m = manifest
                .modality_index(&row[1])
                .ok_or_else(|| parse(line, format!("unknown modality `{}`", &row[1])))?;
            let p = match (&row[2], &row[3]) {
                ("observed", "") => Provenance::Observed,
                ("class_mean", "") => Provenance::ClassMean,
                ("imputed", src) => Provenance::Imputed(
                    src.split(';')
                        .map(|name| {
                            manifest.modality_index(name).ok_or_else(|| {
                                parse(line, format!("unknown source modality `{name}`"))
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
                (status, src) => {
                    return Err(parse(
                        line,
                        format!("invalid status/sources `{status}`/`{src}`"),
                    ))
                }
            };
            if table[k][m].replace(p).is_some() {
                return Err(parse(
                    line,
                    format!("duplicate provenance for `{}` {}", &row[0], &row[1]),
                ));
            }
        }
        let mut provenance = Vec::with_capacity(cohort.len());
        for (subj, row) in cohort.subjects().iter().zip(table) {
            let mut out = Vec::with_capacity(s);
            for (m, p) in row.into_iter().enumerate() {
                let p = p.ok_or_else(|| {
                    Error::Schema(format!(
                        "no provenance for `{}` {}",
                        subj.id, manifest.modalities[m]
                    ))
                })?;
                if subj.features[m].is_none() {
                    return Err(Error::Schema(format!(
                        "`{}` {} is still missing",
                        subj.id, manifest.modalities[m]
                    )));
                }
                out.push(p);
            }
            provenance.push(out);
        }
        Ok(ImputedCohort { cohort, provenance })
    }
}

fn check_models(cohort: &Cohort, encoder: &EncoderModel, decoder: &DecoderModel) -> Result<()> {
    let m = cohort.manifest();
    if encoder.num_rois() != m.num_rois
        || encoder.stats().num_modalities() != m.num_modalities()
        || decoder.num_modalities() != m.num_modalities()
        || decoder.num_rois() != m.num_rois
        || decoder.embedding_dim() != encoder.embedding_dim()
    {
        return Err(Error::Schema(
            "encoder/decoder do not match the cohort manifest".into(),
        ));
    }
    Ok(())
}

/// Fused unit embedding of a subject's observed modalities: the normalized
/// mean of their individual embeddings.
pub fn fused_embedding(
    subject: &Subject,
    encoder: &EncoderModel,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let sources: Vec<usize> = subject.observed().map(|(m, _)| m).collect();
    if sources.is_empty() {
        return Err(Error::Schema(format!(
            "subject `{}` has no observed modality",
            subject.id
        )));
    }
    let rows: Vec<&[f64]> = subject.observed().map(|(_, x)| x).collect();
    let z = encoder.encode(&Matrix::from_rows(&rows)?, &sources)?;
    let mut mean = z.column_sums().into_data();
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= 1e-12) {
        return Err(Error::DegenerateEmbedding { row: 0, norm });
    }
    mean.iter_mut().for_each(|v| *v /= norm);
    Ok((mean, sources))
}

fn impute_subject(
    subject: &Subject,
    encoder: &EncoderModel,
    decoder: &DecoderModel,
) -> Result<(Subject, Vec<Provenance>)> {
    let mut out = subject.clone();
    let mut prov = vec![Provenance::Observed; subject.features.len()];
    if subject.is_complete() {
        return Ok((out, prov));
    }
    let (z, sources) = fused_embedding(subject, encoder)?;
    let z = Matrix::from_vec(1, z.len(), z)?;
    for t in subject.missing() {
        let standardized = decoder.decode(&z, t)?;
        let x = encoder.stats().destandardize(t, standardized.row(0))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "imputed vector of `{}`",
                subject.id
            )));
        }
        out.features[t] = Some(x);
        prov[t] = Provenance::Imputed(sources.clone());
    }
    Ok((out, prov))
}

/// Model-based imputation. Observed entries are copied unchanged.
pub fn impute(
    cohort: &Cohort,
    encoder: &EncoderModel,
    decoder: &DecoderModel,
) -> Result<ImputedCohort> {
    check_models(cohort, encoder, decoder)?;
    let results: Vec<(Subject, Vec<Provenance>)> = cohort
        .subjects()
        .par_iter()
        .map(|s| impute_subject(s, encoder, decoder))
        .collect::<Result<_>>()?;
    let (subjects, provenance): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(ImputedCohort {
        cohort: Cohort::new(cohort.manifest().clone(), subjects)?,
        provenance,
    })
}

/// Mean observed vector per (label, modality), indexed `[label][modality]`.
/// `None` marks a cell without observations.
pub fn class_means(cohort: &Cohort) -> Vec<Vec<Option<Vec<f64>>>> {
    let manifest = cohort.manifest();
    let (v, s, q) = (
        manifest.num_labels(),
        manifest.num_modalities(),
        manifest.num_rois,
    );
    let mut sums = vec![vec![(vec![0.0; q], 0usize); s]; v];
    for r in cohort.records() {
        let (acc, n) = &mut sums[r.label][r.modality];
        acc.iter_mut().zip(r.values).for_each(|(a, x)| *a += x);
        *n += 1;
    }
    sums.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(acc, n)| (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect()))
                .collect()
        })
        .collect()
}

/// Baseline: fills each missing entry with the mean of the same modality
/// over observed subjects sharing the label.
pub fn impute_class_mean(cohort: &Cohort) -> Result<ImputedCohort> {
    let manifest = cohort.manifest();
    let means = class_means(cohort);
    let mut subjects = Vec::with_capacity(cohort.len());
    let mut provenance = Vec::with_capacity(cohort.len());
    for subj in cohort.subjects() {
        let mut out = subj.clone();
        let mut prov = vec![Provenance::Observed; subj.features.len()];
        for t in subj.missing() {
            let mean = means[subj.label][t]
                .clone()
                .ok_or_else(|| Error::Coverage {
                    label: manifest.labels[subj.label].clone(),
                    modality: manifest.modalities[t].clone(),
                })?;
            out.features[t] = Some(mean);
            prov[t] = Provenance::ClassMean;
        }
        subjects.push(out);
        provenance.push(prov);
    }
    Ok(ImputedCohort {
        cohort: Cohort::new(manifest.clone(), subjects)?,
        provenance,
    })
}
