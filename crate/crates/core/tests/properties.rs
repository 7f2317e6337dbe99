use approx::assert_relative_eq;
use proptest::prelude::*;

use ordimpute::data::{Cohort, Manifest, ModalityStats, NormStats, Subject};
use ordimpute::losses::{
    modality_coherence_loss, ordinal_contrastive_loss, supervised_contrastive_loss, LabeledBatch,
};
use ordimpute::numerics::Matrix;

fn manifest() -> Manifest {
    Manifest {
        modalities: vec!["CT".into(), "TAU".into(), "FDG".into()],
        num_rois: 3,
        labels: vec!["CN".into(), "MCI".into(), "AD".into()],
    }
}

prop_compose! {
    fn subject(k: usize)(
        label in 0usize..3,
        mask in 1u8..8,
        values in prop::collection::vec(-1e6f64..1e6, 9),
    ) -> Subject {
        Subject {
            id: format!("S{k}"),
            label,
            features: (0..3)
                .map(|m| (mask >> m & 1 == 1).then(|| values[3 * m..3 * m + 3].to_vec()))
                .collect(),
        }
    }
}

fn cohort() -> impl Strategy<Value = Cohort> {
    (1usize..12)
        .prop_flat_map(|n| (0..n).map(subject).collect::<Vec<_>>())
        .prop_map(|subjects| Cohort::new(manifest(), subjects).unwrap())
}

fn unit_rows(rows: Vec<Vec<f64>>) -> Option<Matrix> {
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        out.push(r.iter().map(|v| v / n).collect::<Vec<_>>());
    }
    Some(Matrix::from_rows(&out).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cohort_csv_round_trips(c in cohort()) {
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = Cohort::from_csv_reader(buf.as_slice(), c.manifest()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn standardize_inverts(
        mean in prop::collection::vec(-100f64..100.0, 3),
        std in prop::collection::vec(0.01f64..50.0, 3),
        x in prop::collection::vec(-1e3f64..1e3, 3),
    ) {
        let stats = NormStats::new(vec![ModalityStats { mean, std }; 2]).unwrap();
        let z = stats.standardize(1, &x).unwrap();
        let back = stats.destandardize(1, &z).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn contrastive_losses_ignore_batch_order(
        rows in prop::collection::vec(prop::collection::vec(-1f64..1.0, 4), 4..12),
        labels_seed in prop::collection::vec(0usize..4, 12),
        rotate in 1usize..11,
    ) {
        let b = rows.len();
        let labels: Vec<usize> = labels_seed[..b].to_vec();
        prop_assume!(labels.iter().any(|&l| l != labels[0]));
        let Some(z) = unit_rows(rows.clone()) else { return Ok(()) };
        let perm: Vec<usize> = (0..b).map(|i| (i + rotate) % b).collect();
        let zp = z.select_rows(&perm);
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let batch = LabeledBatch::new(z, labels, vec![0; b], (0..b).collect(), 4, 1).unwrap();
        let permuted = LabeledBatch::new(zp, lp, vec![0; b], perm.clone(), 4, 1).unwrap();
        for f in [ordinal_contrastive_loss, supervised_contrastive_loss] {
            match (f(&batch, 0.2), f(&permuted, 0.2)) {
                (Ok(x), Ok(y)) => {
                    assert_relative_eq!(x.value, y.value, max_relative = 1e-12);
                    assert_relative_eq!(
                        x.grad.select_rows(&perm).data(),
                        y.grad.data(),
                        epsilon = 1e-10
                    );
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "validity depends on order"),
            }
        }
    }

    #[test]
    fn coherence_is_bounded(
        rows in prop::collection::vec(prop::collection::vec(-1f64..1.0, 3), 2..10),
        subjects in prop::collection::vec(0usize..3, 10),
        modalities in prop::collection::vec(0usize..3, 10),
    ) {
        let b = rows.len();
        let Some(z) = unit_rows(rows) else { return Ok(()) };
        let batch = LabeledBatch::new(z, vec![0; b], modalities[..b].to_vec(), subjects[..b].to_vec(), 1, 3)
            .unwrap();
        let out = modality_coherence_loss(&batch);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&out.value));
        if out.pairs == 0 {
            prop_assert_eq!(out.value, 0.0);
        }
    }
}

#[test]
fn ordinal_loss_penalizes_far_labels_more() {
    // Anchor and positive share label 0; the only negative sits close to the
    // anchor. The ordinal loss grows with that negative's label distance.
    let z = unit_rows(vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.9, 0.1],
        vec![0.9, 0.1],
    ])
    .unwrap();
    let loss = |far: usize| {
        let batch = LabeledBatch::new(
            z.clone(),
            vec![0, 0, far, far],
            vec![0; 4],
            vec![0, 1, 2, 3],
            4,
            1,
        )
        .unwrap();
        ordinal_contrastive_loss(&batch, 0.5).unwrap().value
    };
    assert!(loss(1) < loss(2));
    assert!(loss(2) < loss(3));
}
