//! JSON checkpoints holding all three networks, the input standardization
//! statistics and the training hyperparameters.
//!
//! ```json
//! {"version": 1, "manifest_sha": "...", "hparams": {...},
//!  "weights": {"encoder.0.weight": {"rows": 20, "cols": 128, "data": [...]}, ...},
//!  "norm_stats": {"CT": {"mean": [...], "std": [...]}, ...}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Manifest, ModalityStats, NormStats};
use crate::error::{Error, Result};
use crate::model::{DecoderModel, Dense, DomainClassifier, EncoderModel, Mlp};
use crate::numerics::{Matrix, Parameters};
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HParams {
    pub modalities: Vec<String>,
    pub num_rois: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest_sha: String,
    pub hparams: HParams,
    pub encoder: EncoderModel,
    pub classifier: DomainClassifier,
    pub decoder: DecoderModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    manifest_sha: String,
    hparams: HParams,
    weights: BTreeMap<String, WeightFile>,
    norm_stats: BTreeMap<String, ModalityStats>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl Checkpoint {
    pub fn new(
        manifest: &Manifest,
        train: TrainConfig,
        encoder: EncoderModel,
        classifier: DomainClassifier,
        decoder: DecoderModel,
    ) -> Self {
        Checkpoint {
            manifest_sha: manifest.fingerprint(),
            hparams: HParams {
                modalities: manifest.modalities.clone(),
                num_rois: manifest.num_rois,
                train,
            },
            encoder,
            classifier,
            decoder,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut weights = BTreeMap::new();
        let mut collect = |name: &str, m: &Matrix| {
            weights.insert(
                name.to_string(),
                WeightFile {
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                },
            );
        };
        self.encoder.visit_params(&mut collect);
        self.classifier.visit_params(&mut collect);
        self.decoder.visit_params(&mut collect);

        let stats = self.encoder.stats();
        if stats.num_modalities() != self.hparams.modalities.len() {
            return Err(Error::Schema(
                "normalization statistics do not cover every modality".into(),
            ));
        }
        let norm_stats = self
            .hparams
            .modalities
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), stats.get(i).clone()))
            .collect();

        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            manifest_sha: self.manifest_sha.clone(),
            hparams: self.hparams.clone(),
            weights,
            norm_stats,
        };
        let mut out = serde_json::to_vec_pretty(&file)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Parses a checkpoint. When `manifest` is given its fingerprint must
    /// match the one recorded at training time.
    pub fn from_json(bytes: &[u8], manifest: Option<&Manifest>) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_slice(bytes)?;
        if probe.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let file: CheckpointFile = serde_json::from_slice(bytes)?;
        if let Some(manifest) = manifest {
            let found = manifest.fingerprint();
            if found != file.manifest_sha {
                return Err(Error::Fingerprint {
                    expected: file.manifest_sha,
                    found,
                });
            }
        }
        let mut weights = file.weights;
        let encoder_net = take_mlp(&mut weights, EncoderModel::NAME)?;
        let classifier_net = take_mlp(&mut weights, DomainClassifier::NAME)?;
        let decoder_net = take_mlp(&mut weights, DecoderModel::NAME)?;
        if let Some(extra) = weights.keys().next() {
            return Err(Error::Schema(format!("unexpected weight `{extra}`")));
        }

        let hp = &file.hparams;
        let mut norm_stats = file.norm_stats;
        let stats = hp
            .modalities
            .iter()
            .map(|m| {
                norm_stats
                    .remove(m)
                    .ok_or_else(|| Error::Schema(format!("missing norm_stats for `{m}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = norm_stats.keys().next() {
            return Err(Error::Schema(format!(
                "norm_stats for unknown modality `{extra}`"
            )));
        }
        let stats = NormStats::new(stats)?;
        if stats.num_rois() != hp.num_rois {
            return Err(Error::Schema(
                "norm_stats width differs from num_rois".into(),
            ));
        }

        let encoder = EncoderModel::from_parts(encoder_net, stats)?;
        let classifier = DomainClassifier::from_parts(classifier_net);
        let decoder = DecoderModel::from_parts(decoder_net, hp.modalities.len())?;
        let s = hp.modalities.len();
        let m = encoder.embedding_dim();
        if classifier.net().input_dim() != m
            || classifier.num_modalities() != s
            || decoder.embedding_dim() != m
            || decoder.num_rois() != hp.num_rois
        {
            return Err(Error::Schema("network shapes are inconsistent".into()));
        }

        Ok(Checkpoint {
            manifest_sha: file.manifest_sha,
            hparams: file.hparams,
            encoder,
            classifier,
            decoder,
        })
    }
}

fn take_mlp(weights: &mut BTreeMap<String, WeightFile>, name: &str) -> Result<Mlp> {
    let mut layers = Vec::new();
    loop {
        let i = layers.len();
        let (wk, bk) = (format!("{name}.{i}.weight"), format!("{name}.{i}.bias"));
        let (Some(w), Some(b)) = (weights.remove(&wk), weights.remove(&bk)) else {
            break;
        };
        let weight = Matrix::from_vec(w.rows, w.cols, w.data)?;
        let bias = Matrix::from_vec(b.rows, b.cols, b.data)?;
        if !weight.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite(format!("weights of `{name}` layer {i}")));
        }
        layers.push(Dense { weight, bias });
    }
    Mlp::from_layers(name, layers)
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint at `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_json()?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, manifest: Option<&Manifest>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_json(&bytes, manifest)
}
