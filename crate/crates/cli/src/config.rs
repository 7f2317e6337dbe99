//! Run configuration: a JSON file with every field optional, overridden by
//! command-line flags, and echoed back as `effective_config.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ordimpute::data::{reference_retention, Manifest, SyntheticSpec};
use ordimpute::evaluation::ClassifierConfig;
use ordimpute::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides `train.seed` and `eval.classifier.seed`, and
    /// seeds the synthetic generator and the fold assignment.
    pub seed: u64,
    /// Worker threads; all cores when unset. Outputs do not depend on it.
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    /// Which subjects train the imputer.
    pub train_subjects: TrainSubjects,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            paths: PathsConfig::default(),
            train_subjects: TrainSubjects::Incomplete,
            train: TrainConfig::default(),
            synthetic: SyntheticConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Artifact locations. Relative paths resolve against the run directory, so
/// a whole pipeline shares one `--out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Run directory; `runs/<config hash>-<unix seconds>` when unset.
    pub out_dir: Option<PathBuf>,
    pub features: PathBuf,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub checkpoint: PathBuf,
    pub imputed: PathBuf,
    pub provenance: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: None,
            features: "features.csv".into(),
            manifest: "manifest.json".into(),
            ground_truth: "ground_truth.csv".into(),
            checkpoint: "checkpoint.json".into(),
            imputed: "imputed.csv".into(),
            provenance: "provenance.csv".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSubjects {
    /// Only subjects missing at least one modality. Complete subjects are
    /// the downstream test pool, so they never shape the imputer.
    Incomplete,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Retention {
    Uniform(f64),
    PerLabel(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_subjects: usize,
    pub num_rois: usize,
    pub modalities: Vec<String>,
    pub labels: Vec<String>,
    pub latent_dim: usize,
    pub noise_std: f64,
    pub nuisance_std: f64,
    /// Observation probability by modality name, either one value or one per
    /// label; `"*"` covers unnamed modalities. Unset means the reference
    /// pattern for the default 4x4 layout and 1.0 otherwise.
    pub retention: Option<BTreeMap<String, Retention>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        SyntheticConfig {
            num_subjects: spec.num_subjects,
            num_rois: spec.manifest.num_rois,
            modalities: spec.manifest.modalities,
            labels: spec.manifest.labels,
            latent_dim: spec.latent_dim,
            noise_std: spec.noise_std,
            nuisance_std: spec.nuisance_std,
            retention: None,
        }
    }
}

impl SyntheticConfig {
    pub fn to_spec(&self, seed: u64) -> Result<SyntheticSpec, CliError> {
        let manifest = Manifest {
            modalities: self.modalities.clone(),
            num_rois: self.num_rois,
            labels: self.labels.clone(),
        };
        manifest
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let (s, v) = (manifest.num_modalities(), manifest.num_labels());
        let retention = match &self.retention {
            None if manifest
                == Manifest {
                    num_rois: self.num_rois,
                    ..Manifest::default()
                } =>
            {
                reference_retention()
            }
            None => vec![vec![1.0; v]; s],
            Some(map) => {
                if let Some(k) = map
                    .keys()
                    .find(|k| *k != "*" && manifest.modality_index(k).is_none())
                {
                    return Err(CliError::Config(format!(
                        "retention names unknown modality `{k}`"
                    )));
                }
                let mut out = Vec::with_capacity(s);
                for name in &manifest.modalities {
                    let r = map.get(name).or_else(|| map.get("*")).ok_or_else(|| {
                        CliError::Config(format!(
                            "no retention for modality `{name}` and no `*` entry"
                        ))
                    })?;
                    out.push(match r {
                        Retention::Uniform(p) => vec![*p; v],
                        Retention::PerLabel(ps) if ps.len() == v => ps.clone(),
                        Retention::PerLabel(ps) => {
                            return Err(CliError::Config(format!(
                                "retention for `{name}` has {} entries, expected {v}",
                                ps.len()
                            )))
                        }
                    });
                }
                out
            }
        };
        let spec = SyntheticSpec {
            num_subjects: self.num_subjects,
            manifest,
            latent_dim: self.latent_dim,
            noise_std: self.noise_std,
            nuisance_std: self.nuisance_std,
            retention,
            seed,
        };
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Family-wise significance level before the Bonferroni split over ROIs.
    pub alpha: f64,
    pub folds: usize,
    /// Train the downstream classifier on complete cases only.
    pub no_imputation: bool,
    pub classifier: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: 0.01,
            folds: 5,
            no_imputation: false,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub folds: Option<usize>,
    pub depth: Option<usize>,
    pub loss_mode: Option<ordimpute::losses::LossMode>,
    pub no_mc: bool,
    pub no_imputation: bool,
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CliError> {
        serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        Self::from_json(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies flags, propagates the master seed and validates. The run
    /// directory from `--out` is not stored, so the echoed config can be
    /// replayed anywhere.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(alpha) = o.alpha {
            self.eval.alpha = alpha;
        }
        if let Some(folds) = o.folds {
            self.eval.folds = folds;
        }
        if let Some(depth) = o.depth {
            self.eval.classifier.depth = depth;
        }
        if let Some(mode) = o.loss_mode {
            self.train.loss_mode = mode;
        }
        if o.no_mc {
            self.train.use_mc = false;
        }
        if o.no_imputation {
            self.eval.no_imputation = true;
        }
        self.train.seed = self.seed;
        self.eval.classifier.seed = self.seed;

        let cfg = |e: ordimpute::Error| CliError::Config(e.to_string());
        self.train.validate().map_err(cfg)?;
        self.eval.classifier.validate().map_err(cfg)?;
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.eval.alpha
            )));
        }
        if self.eval.folds < 2 {
            return Err(CliError::Config("folds must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }

    /// First 8 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash8(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&compact))[..8].to_string()
    }

    pub fn run_dir(&self, out: Option<&Path>) -> PathBuf {
        if let Some(dir) = out.or(self.paths.out_dir.as_deref()) {
            return dir.to_path_buf();
        }
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        PathBuf::from("runs").join(format!("{}-{secs}", self.hash8()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_json(br#"{"sed": 1}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(br#"{"train": {"epoch": 1}}"#),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn flags_win_and_seed_propagates() {
        let c = RunConfig::from_json(br#"{"seed": 3, "eval": {"folds": 4}}"#).unwrap();
        let c = c
            .resolve(&Overrides {
                seed: Some(9),
                folds: Some(3),
                no_mc: true,
                ..Default::default()
            })
            .unwrap();
        assert_eq!((c.seed, c.train.seed, c.eval.classifier.seed), (9, 9, 9));
        assert_eq!(c.eval.folds, 3);
        assert!(!c.train.use_mc);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig::default().resolve(&Overrides::default()).unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash8(), c.hash8());
    }

    #[test]
    fn retention_map() {
        let mut s = SyntheticConfig::default();
        s.retention = Some(BTreeMap::from([
            ("CT".to_string(), Retention::Uniform(1.0)),
            (
                "*".to_string(),
                Retention::PerLabel(vec![0.5, 0.5, 0.4, 0.3]),
            ),
        ]));
        let spec = s.to_spec(0).unwrap();
        assert_eq!(spec.retention[0], vec![1.0; 4]);
        assert_eq!(spec.retention[3], vec![0.5, 0.5, 0.4, 0.3]);

        s.retention = Some(BTreeMap::from([(
            "PIB".to_string(),
            Retention::Uniform(1.0),
        )]));
        assert!(matches!(s.to_spec(0), Err(CliError::Config(_))));
        s.retention = Some(BTreeMap::from([(
            "CT".to_string(),
            Retention::Uniform(1.0),
        )]));
        assert!(matches!(s.to_spec(0), Err(CliError::Config(_))));
    }

    #[test]
    fn default_layout_uses_reference_retention() {
        let spec = SyntheticConfig::default().to_spec(0).unwrap();
        assert_eq!(spec.retention, reference_retention());
    }
}
