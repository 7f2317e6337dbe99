use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// Cross-validation folds over complete-case subjects. Incomplete subjects
/// never enter a test fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Vec<String>>,
    pub train_only: Vec<String>,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    /// Subject ids used for training when `fold` is held out.
    pub fn train_ids(&self, fold: usize, include_incomplete: bool) -> Vec<String> {
        let mut ids: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect();
        if include_incomplete {
            ids.extend(self.train_only.iter().cloned());
        }
        ids
    }
}

/// Complete-case subjects are sorted by id, shuffled within each label, then
/// dealt round-robin across folds label after label, so every fold gets its
/// share of each label. When some label has fewer than `k` complete subjects
/// the whole complete set is shuffled and dealt instead.
pub fn make_splits(cohort: &Cohort, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let subjects = cohort.subjects();
    let mut complete: Vec<(&str, usize)> = subjects
        .iter()
        .filter(|s| s.is_complete())
        .map(|s| (s.id.as_str(), s.label))
        .collect();
    if complete.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} complete-case subjects cannot fill {k} folds",
            complete.len()
        )));
    }
    complete.sort_unstable();

    let v = cohort.manifest().num_labels();
    let mut by_label: Vec<Vec<&str>> = vec![Vec::new(); v];
    for &(id, label) in &complete {
        by_label[label].push(id);
    }
    let stratified = by_label.iter().all(|ids| ids.len() >= k);

    let mut rng = seeded_rng(seed);
    let order: Vec<&str> = if stratified {
        by_label
            .into_iter()
            .flat_map(|mut ids| {
                ids.shuffle(&mut rng);
                ids
            })
            .collect()
    } else {
        let mut ids: Vec<&str> = complete.iter().map(|(id, _)| *id).collect();
        ids.shuffle(&mut rng);
        ids
    };

    let mut folds = vec![Vec::new(); k];
    for (p, id) in order.into_iter().enumerate() {
        folds[p % k].push(id.to_string());
    }
    let mut train_only: Vec<String> = subjects
        .iter()
        .filter(|s| !s.is_complete())
        .map(|s| s.id.clone())
        .collect();
    train_only.sort_unstable();
    Ok(SplitPlan {
        folds,
        train_only,
        stratified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Manifest, Subject};
    use std::collections::BTreeSet;

    fn cohort(labels: &[usize], incomplete_every: usize) -> Cohort {
        let manifest = Manifest {
            modalities: vec!["CT".into(), "FDG".into()],
            num_rois: 1,
            labels: ["CN", "EMCI", "LMCI", "AD"].map(String::from).to_vec(),
        };
        let subjects = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Subject {
                id: format!("S{i:04}"),
                label,
                features: if incomplete_every > 0 && i % incomplete_every == 0 {
                    vec![Some(vec![1.0]), None]
                } else {
                    vec![Some(vec![1.0]), Some(vec![2.0])]
                },
            })
            .collect();
        Cohort::new(manifest, subjects).unwrap()
    }

    #[test]
    fn folds_partition_complete_cases() {
        let labels: Vec<usize> = (0..137).map(|i| (i * 7) % 4).collect();
        let c = cohort(&labels, 5);
        let plan = make_splits(&c, 5, 11).unwrap();
        let mut seen = BTreeSet::new();
        for fold in &plan.folds {
            for id in fold {
                assert!(seen.insert(id.clone()), "{id} in two folds");
            }
        }
        let complete: BTreeSet<String> = c
            .subjects()
            .iter()
            .filter(|s| s.is_complete())
            .map(|s| s.id.clone())
            .collect();
        assert_eq!(seen, complete);
        assert!(plan.train_only.iter().all(|id| !complete.contains(id)));
        assert_eq!(plan.train_only.len() + complete.len(), 137);
        assert!(plan.stratified);
    }

    #[test]
    fn reference_common_count_gives_equal_folds() {
        // complete-case counts per label 123/102/40/10
        let mut labels = vec![0; 123];
        labels.extend([1; 102]);
        labels.extend([2; 40]);
        labels.extend([3; 10]);
        let plan = make_splits(&cohort(&labels, 0), 5, 0).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![55; 5]);
        // every fold gets AD subjects
        for fold in &plan.folds {
            assert!(fold.iter().any(|id| id.as_str() >= "S0265"));
        }
    }

    #[test]
    fn invariant_under_input_order() {
        let labels: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let c = cohort(&labels, 7);
        let mut reversed: Vec<Subject> = c.subjects().to_vec();
        reversed.reverse();
        let r = Cohort::new(c.manifest().clone(), reversed).unwrap();
        assert_eq!(
            make_splits(&c, 3, 4).unwrap(),
            make_splits(&r, 3, 4).unwrap()
        );
        assert_ne!(
            make_splits(&c, 3, 4).unwrap(),
            make_splits(&c, 3, 5).unwrap()
        );
    }

    #[test]
    fn relaxes_stratification_for_rare_labels() {
        let mut labels = vec![0; 20];
        labels.extend([1, 2, 3]);
        let plan = make_splits(&cohort(&labels, 0), 5, 0).unwrap();
        assert!(!plan.stratified);
        assert_eq!(plan.folds.iter().map(Vec::len).sum::<usize>(), 23);
    }

    #[test]
    fn guards() {
        let c = cohort(&[0, 1, 2, 3], 0);
        assert!(matches!(make_splits(&c, 1, 0), Err(Error::Config(_))));
        assert!(matches!(
            make_splits(&c, 5, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn train_ids_exclude_held_out_fold() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let plan = make_splits(&cohort(&labels, 6), 4, 2).unwrap();
        let train = plan.train_ids(1, true);
        assert!(plan.folds[1].iter().all(|id| !train.contains(id)));
        assert_eq!(train.len(), 40 - plan.folds[1].len());
        assert_eq!(
            plan.train_ids(1, false).len(),
            train.len() - plan.train_only.len()
        );
    }
}
