use std::io::Write;
use std::path::Path;

use crate::data::Cohort;
use crate::error::Result;
use crate::model::EncoderModel;
use crate::numerics::Matrix;

/// Embeddings of every observed record, in `Cohort::records` order, with
/// the record's subject index, modality and label.
pub struct RecordEmbeddings {
    pub z: Matrix,
    pub subjects: Vec<usize>,
    pub modalities: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn embed_records(cohort: &Cohort, encoder: &EncoderModel) -> Result<RecordEmbeddings> {
    let records: Vec<_> = cohort.records().collect();
    let rows: Vec<&[f64]> = records.iter().map(|r| r.values).collect();
    let modalities: Vec<usize> = records.iter().map(|r| r.modality).collect();
    let z = encoder.encode(&Matrix::from_rows(&rows)?, &modalities)?;
    Ok(RecordEmbeddings {
        z,
        subjects: records.iter().map(|r| r.subject).collect(),
        modalities,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// CSV rows `subject_id,modality,label,z_0..z_{m-1}`.
pub fn write_embeddings<W: Write>(cohort: &Cohort, encoder: &EncoderModel, mut w: W) -> Result<()> {
    let e = embed_records(cohort, encoder)?;
    let manifest = cohort.manifest();
    write!(w, "subject_id,modality,label")?;
    for j in 0..e.z.cols() {
        write!(w, ",z_{j}")?;
    }
    writeln!(w)?;
    for (r, row) in e.z.row_iter().enumerate() {
        write!(
            w,
            "{},{},{}",
            cohort.subjects()[e.subjects[r]].id,
            manifest.modalities[e.modalities[r]],
            manifest.labels[e.labels[r]]
        )?;
        for v in row {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn export_embeddings(cohort: &Cohort, encoder: &EncoderModel, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings(cohort, encoder, &mut f)?;
    f.flush()?;
    Ok(())
}
