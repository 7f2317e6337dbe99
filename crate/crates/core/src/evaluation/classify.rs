//! Downstream diagnosis classification under k-fold cross-validation, and
//! the generic MLP classifier it uses (also used as a modality probe).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, SplitPlan, STD_FLOOR};
use crate::error::{Error, Result};
use crate::imputation::{ImputedCohort, Provenance};
use crate::model::Mlp;
use crate::numerics::{derive_seed, seeded_rng, AdamW, AdamWConfig, Matrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Number of affine layers.
    pub depth: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Standardize input columns with training statistics before fitting.
    pub standardize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            depth: 2,
            width: 128,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.05,
            seed: 0,
            standardize: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "classifier depth, width, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "classifier lr/weight_decay out of range".into(),
            ));
        }
        Ok(())
    }
}

/// An MLP on column-standardized inputs, trained with softmax cross-entropy.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    net: Mlp,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean: Vec<f64> = x
        .column_sums()
        .into_data()
        .into_iter()
        .map(|s| s / n)
        .collect();
    let mut var = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let denom = (n - 1.0).max(1.0);
    let std = var
        .into_iter()
        .map(|v| (v / denom).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

fn standardize_cols(x: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
    out
}

impl MlpClassifier {
    pub fn fit(
        x: &Matrix,
        y: &[usize],
        num_classes: usize,
        config: &ClassifierConfig,
    ) -> Result<Self> {
        config.validate()?;
        if x.rows() != y.len() || x.rows() == 0 {
            return Err(Error::InsufficientData(format!(
                "classifier needs matching nonempty inputs, got {} rows and {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&c) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Label(format!("class {c} outside 0..{num_classes}")));
        }
        let (mean, std) = if config.standardize {
            column_stats(x)
        } else {
            (vec![0.0; x.cols()], vec![1.0; x.cols()])
        };
        let xs = standardize_cols(x, &mean, &std);
        let mut widths = vec![x.cols()];
        widths.extend(std::iter::repeat(config.width).take(config.depth - 1));
        widths.push(num_classes);
        let mut rng = seeded_rng(config.seed);
        let mut net = Mlp::new("classifier", &widths, &mut rng);
        let mut opt = AdamW::new(AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        });
        let mut order: Vec<usize> = (0..xs.rows()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let input = tape.constant(xs.select_rows(idx));
                let logits = net.forward_tape(&mut tape, input)?;
                let targets: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
                let loss = tape.softmax_cross_entropy(logits, &targets)?;
                let grads = tape.backward(loss)?;
                opt.step(&mut [&mut net], &grads)?;
            }
        }
        Ok(MlpClassifier { net, mean, std })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self
            .net
            .forward(&standardize_cols(x, &self.mean, &self.std))?;
        Ok(logits
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        c[t][p] += 1;
    }
    c
}

/// Accuracy plus support-weighted precision and recall. A class that is
/// never predicted has precision 0.
pub fn weighted_metrics(confusion: &[Vec<usize>]) -> Metrics {
    let v = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return Metrics::default();
    }
    let n = total as f64;
    let correct: usize = (0..v).map(|i| confusion[i][i]).sum();
    let (mut precision, mut recall) = (0.0, 0.0);
    for c in 0..v {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = (0..v).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c] as f64;
        let w = support as f64 / n;
        if predicted > 0 {
            precision += w * tp / predicted as f64;
        }
        recall += w * tp / support as f64;
    }
    Metrics {
        accuracy: correct as f64 / n,
        precision,
        recall,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub depth: usize,
    pub with_imputation: bool,
    pub folds: Vec<FoldReport>,
    pub mean: Metrics,
    /// Population standard deviation over folds.
    pub std: Metrics,
}

fn summarize(folds: &[FoldReport]) -> (Metrics, Metrics) {
    let n = folds.len() as f64;
    let pick = |f: fn(&Metrics) -> f64| -> (f64, f64) {
        let mean = folds.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let var = folds
            .iter()
            .map(|r| (f(&r.metrics) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    };
    let (a, sa) = pick(|m| m.accuracy);
    let (p, sp) = pick(|m| m.precision);
    let (r, sr) = pick(|m| m.recall);
    (
        Metrics {
            accuracy: a,
            precision: p,
            recall: r,
        },
        Metrics {
            accuracy: sa,
            precision: sp,
            recall: sr,
        },
    )
}

/// Concatenation of all modality vectors of a subject, in manifest order.
fn concat_features(features: &[Option<Vec<f64>>]) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for f in features {
        out.extend_from_slice(f.as_deref()?);
    }
    Some(out)
}

/// k-fold classification of concatenated S·Q feature vectors. Test folds
/// always use the observed features of complete-case subjects; training uses
/// the other folds plus, when `imputed` is given, its filled-in incomplete
/// subjects.
pub fn downstream_classify(
    cohort: &Cohort,
    plan: &SplitPlan,
    imputed: Option<&ImputedCohort>,
    config: &ClassifierConfig,
) -> Result<ClassifierReport> {
    config.validate()?;
    let manifest = cohort.manifest();
    let index: HashMap<&str, usize> = cohort
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let imputed_index: Option<HashMap<&str, usize>> = imputed.map(|imp| {
        imp.cohort
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    });
    if let Some(imp) = imputed {
        if imp.cohort.manifest() != manifest {
            return Err(Error::Schema(
                "imputed cohort has a different manifest".into(),
            ));
        }
    }

    let lookup = |id: &str| -> Result<usize> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Schema(format!("split names unknown subject `{id}`")))
    };

    // Leakage guard: a test subject must be fully observed, and if an imputed
    // cohort is supplied none of its entries may be synthetic.
    for fold in &plan.folds {
        for id in fold {
            let subj = &cohort.subjects()[lookup(id)?];
            if let Some(m) = subj.missing().next() {
                return Err(Error::Leakage {
                    subject: id.clone(),
                    modality: manifest.modalities[m].clone(),
                });
            }
            if let (Some(imp), Some(idx)) = (imputed, imputed_index.as_ref()) {
                if let Some(&k) = idx.get(id.as_str()) {
                    if let Some(m) = imp.provenance[k]
                        .iter()
                        .position(|p| *p != Provenance::Observed)
                    {
                        return Err(Error::Leakage {
                            subject: id.clone(),
                            modality: manifest.modalities[m].clone(),
                        });
                    }
                }
            }
        }
    }

    let observed_rows = |ids: &[String]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut xs = Vec::with_capacity(ids.len());
        let mut ys = Vec::with_capacity(ids.len());
        for id in ids {
            let s = &cohort.subjects()[lookup(id)?];
            xs.push(concat_features(&s.features).expect("complete-case subject"));
            ys.push(s.label);
        }
        Ok((xs, ys))
    };

    let mut supplementary = (Vec::new(), Vec::new());
    if let (Some(imp), Some(idx)) = (imputed, imputed_index.as_ref()) {
        for id in &plan.train_only {
            let &k = idx
                .get(id.as_str())
                .ok_or_else(|| Error::Schema(format!("imputed cohort lacks subject `{id}`")))?;
            let s = &imp.cohort.subjects()[k];
            let x = concat_features(&s.features).ok_or_else(|| {
                Error::Schema(format!("imputed subject `{id}` is still incomplete"))
            })?;
            supplementary.0.push(x);
            supplementary.1.push(s.label);
        }
    }

    let v = manifest.num_labels();
    let folds: Vec<FoldReport> = (0..plan.num_folds())
        .into_par_iter()
        .map(|f| -> Result<FoldReport> {
            let (mut xs, mut ys) = observed_rows(&plan.train_ids(f, false))?;
            xs.extend(supplementary.0.iter().cloned());
            ys.extend(supplementary.1.iter().copied());
            let (tx, ty) = observed_rows(&plan.folds[f])?;
            let fold_config = ClassifierConfig {
                seed: derive_seed(config.seed, f as u64),
                ..config.clone()
            };
            let clf = MlpClassifier::fit(&Matrix::from_rows(&xs)?, &ys, v, &fold_config)?;
            let pred = clf.predict(&Matrix::from_rows(&tx)?)?;
            let confusion = confusion_matrix(&ty, &pred, v);
            Ok(FoldReport {
                fold: f,
                n_train: xs.len(),
                n_test: tx.len(),
                metrics: weighted_metrics(&confusion),
                confusion,
            })
        })
        .collect::<Result<_>>()?;
    let (mean, std) = summarize(&folds);
    Ok(ClassifierReport {
        depth: config.depth,
        with_imputation: imputed.is_some(),
        folds,
        mean,
        std,
    })
}

/// Accuracy of a freshly trained classifier predicting `classes` from the
/// rows of `x`, with rows split into train/test halves by `groups` (rows of
/// one group never straddle the split).
pub fn probe_accuracy(
    x: &Matrix,
    classes: &[usize],
    groups: &[usize],
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<f64> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut seeded_rng(derive_seed(config.seed, 0xC1A55)));
    let test: std::collections::HashSet<usize> = ids[..ids.len() / 2].iter().copied().collect();
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
        (0..x.rows()).partition(|r| !test.contains(&groups[*r]));
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::InsufficientData(
            "probe needs at least two groups".into(),
        ));
    }
    let pick = |rows: &[usize]| rows.iter().map(|&r| classes[r]).collect::<Vec<_>>();
    let clf = MlpClassifier::fit(
        &x.select_rows(&train_rows),
        &pick(&train_rows),
        num_classes,
        config,
    )?;
    let pred = clf.predict(&x.select_rows(&test_rows))?;
    let truth = pick(&test_rows);
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_recall_is_accuracy() {
        let c = vec![vec![5, 2, 0], vec![1, 3, 4], vec![0, 0, 9]];
        let m = weighted_metrics(&c);
        assert!((m.recall - m.accuracy).abs() < 1e-12);
        assert!((m.accuracy - 17.0 / 24.0).abs() < 1e-15);
        // precision: (7/24)(5/6) + (8/24)(3/5) + (9/24)(9/13)
        let p = 7.0 / 24.0 * 5.0 / 6.0 + 8.0 / 24.0 * 3.0 / 5.0 + 9.0 / 24.0 * 9.0 / 13.0;
        assert!((m.precision - p).abs() < 1e-15);
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        let c = vec![vec![2, 0], vec![2, 0]];
        let m = weighted_metrics(&c);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.precision - 0.25).abs() < 1e-15);
    }

    #[test]
    fn separable_clusters_are_learned() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..80 {
            let c = i % 4;
            rows.push(vec![
                c as f64 * 3.0 + (i as f64 * 0.37).sin() * 0.3,
                (i as f64).cos() * 0.3,
            ]);
            y.push(c);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let config = ClassifierConfig {
            width: 32,
            epochs: 100,
            batch_size: 16,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let clf = MlpClassifier::fit(&x, &y, 4, &config).unwrap();
        let pred = clf.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 80.0;
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn population_std_over_folds() {
        let fold = |a: f64| FoldReport {
            fold: 0,
            n_train: 1,
            n_test: 1,
            metrics: Metrics {
                accuracy: a,
                precision: a,
                recall: a,
            },
            confusion: vec![],
        };
        let (mean, std) = summarize(&[fold(0.5), fold(0.7)]);
        assert!((mean.accuracy - 0.6).abs() < 1e-15);
        assert!((std.accuracy - 0.1).abs() < 1e-15);
    }
}
