use ordimpute::data::{generate_synthetic, load_cohort, SyntheticSpec};
use ordimpute::imputation::{impute, Provenance};
use ordimpute::model::{load_checkpoint, save_checkpoint, Checkpoint};
use ordimpute::training::{reconstruction_mse, train, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 80,
        batch_size: 128,
        hidden: 32,
        embedding_dim: 16,
        log_every: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn train_impute_and_checkpoint_round_trip() {
    let spec = SyntheticSpec {
        num_subjects: 120,
        retention: vec![vec![0.7; 4]; 4],
        seed: 5,
        ..SyntheticSpec::default()
    };
    let (cohort, _) = generate_synthetic(&spec).unwrap();
    let models = train(&cohort, &small_config()).unwrap();

    let first = &models.encoder_log.entries[0];
    let last = models.encoder_log.entries.last().unwrap();
    assert_eq!(last.epoch, 80);
    assert!(last.l_e.unwrap() < first.l_e.unwrap());
    let d_first = models.decoder_log.entries[0].l_d.unwrap();
    let d_last = models.decoder_log.entries.last().unwrap().l_d.unwrap();
    assert!(d_last < d_first);
    let mse = reconstruction_mse(&cohort, &models.encoder, &models.decoder).unwrap();
    assert!(mse < 1.0, "self-reconstruction mse {mse}");

    let out = impute(&cohort, &models.encoder, &models.decoder).unwrap();
    assert_eq!(out.num_filled(), cohort.num_missing());
    for ((before, after), prov) in cohort
        .subjects()
        .iter()
        .zip(out.cohort.subjects())
        .zip(&out.provenance)
    {
        for m in 0..4 {
            match &before.features[m] {
                Some(v) => {
                    assert_eq!(prov[m], Provenance::Observed);
                    assert_eq!(after.features[m].as_ref(), Some(v));
                }
                None => {
                    let Provenance::Imputed(src) = &prov[m] else {
                        panic!("{:?}", prov[m])
                    };
                    let observed: Vec<usize> = before.observed().map(|(s, _)| s).collect();
                    assert_eq!(src, &observed);
                    assert!(after.features[m]
                        .as_ref()
                        .unwrap()
                        .iter()
                        .all(|v| v.is_finite()));
                }
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let ckpt = Checkpoint::new(
        cohort.manifest(),
        small_config(),
        models.encoder,
        models.classifier,
        models.decoder,
    );
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path, Some(cohort.manifest())).unwrap();
    assert_eq!(back, ckpt);
    let again = impute(&cohort, &back.encoder, &back.decoder).unwrap();
    assert_eq!(again, out);
}

#[test]
fn training_is_deterministic() {
    let spec = SyntheticSpec {
        num_subjects: 40,
        seed: 9,
        ..SyntheticSpec::default()
    };
    let (cohort, _) = generate_synthetic(&spec).unwrap();
    let config = TrainConfig {
        epochs: 10,
        ..small_config()
    };
    let a = train(&cohort, &config).unwrap();
    let b = train(&cohort, &config).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.decoder, b.decoder);
    let strip = |log: &ordimpute::training::TrainLog| {
        log.entries
            .iter()
            .map(|e| (e.epoch, e.l_e, e.l_d, e.grad_norm))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.encoder_log), strip(&b.encoder_log));
}

#[test]
fn bundled_fixture_matches_its_generator() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/k50");
    let cohort = load_cohort(&root.join("features.csv"), &root.join("manifest.json")).unwrap();
    let truth = load_cohort(&root.join("ground_truth.csv"), &root.join("manifest.json")).unwrap();
    // Mirrors fixtures/k50/config.json.
    let spec = SyntheticSpec {
        num_subjects: 50,
        retention: vec![vec![0.8; 4]; 4],
        seed: 7,
        ..SyntheticSpec::default()
    };
    let (expect, expect_truth) = generate_synthetic(&spec).unwrap();
    assert_eq!(cohort.len(), 50);
    assert_eq!(cohort.manifest().num_rois, 20);
    assert_eq!(cohort.modality_counts(), expect.modality_counts());
    assert_eq!(cohort, expect);
    assert_eq!(truth, expect_truth.complete);
}
