//! Two sequential phases: the encoder and the modality classifier are
//! trained together on the composite encoder loss, then the encoder is frozen
//! and the conditional decoder learns to reconstruct each record from its
//! embedding.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{standardization_stats, Cohort, NormStats};
use crate::error::{Error, Result};
use crate::losses::{decoder_loss, encoder_loss, EncoderLossConfig, LossMode};
use crate::model::{DecoderModel, DomainClassifier, EncoderModel};
use crate::numerics::{derive_seed, seeded_rng, AdamW, AdamWConfig, Matrix, Tape};

const STREAM_ENCODER_INIT: u64 = 100;
const STREAM_ENCODER_SHUFFLE: u64 = 101;
const STREAM_DECODER_INIT: u64 = 200;
const STREAM_DECODER_SHUFFLE: u64 = 201;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Decoder phase length; the encoder's `epochs` when unset.
    pub decoder_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub lambda_rev: f64,
    pub loss_mode: LossMode,
    pub use_mc: bool,
    pub seed: u64,
    pub log_every: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            decoder_epochs: None,
            batch_size: 4096,
            lr: 1e-3,
            weight_decay: 0.05,
            tau: 0.1,
            lambda_rev: 1.0,
            loss_mode: LossMode::Ocl,
            use_mc: true,
            seed: 0,
            log_every: 1,
            hidden: 128,
            embedding_dim: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
            ("hidden", self.hidden),
            ("embedding_dim", self.embedding_dim),
            ("decoder_epochs", self.decoder_epochs.unwrap_or(1)),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(self.lambda_rev >= 0.0 && self.lambda_rev.is_finite()) {
            return Err(Error::Config("lambda_rev must be non-negative".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn loss_config(&self) -> EncoderLossConfig {
        EncoderLossConfig {
            tau: self.tau,
            lambda_rev: self.lambda_rev,
            mode: self.loss_mode,
            use_mc: self.use_mc,
        }
    }
}

/// Per-epoch means over batches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_da: Option<f64>,
    /// Mean over the batches that had a contrastive term.
    pub l_contrastive: Option<f64>,
    pub l_mc: Option<f64>,
    pub l_e: Option<f64>,
    pub l_d: Option<f64>,
    pub grad_norm: f64,
    pub contrastive_skipped: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
    pub seconds: f64,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        let last = if self.entries.iter().any(|e| e.l_d.is_some()) {
            "l_d"
        } else {
            "l_e"
        };
        writeln!(w, "epoch,l_da,l_contrastive,l_mc,{last},grad_norm,seconds")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{:?},{:.3}",
                e.epoch,
                cell(e.l_da),
                cell(e.l_contrastive),
                cell(e.l_mc),
                cell(e.l_d.or(e.l_e)),
                e.grad_norm,
                e.seconds
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// The flattened record pool of a cohort: one standardized row per
/// observed (subject, modality).
struct Pool {
    x: Matrix,
    subjects: Vec<usize>,
    modalities: Vec<usize>,
    labels: Vec<usize>,
}

fn record_pool(cohort: &Cohort, stats: &NormStats) -> Result<Pool> {
    let q = cohort.manifest().num_rois;
    let n = cohort.num_records();
    let mut data = Vec::with_capacity(n * q);
    let (mut subjects, mut modalities, mut labels) = (vec![], vec![], vec![]);
    for r in cohort.records() {
        data.extend(stats.standardize(r.modality, r.values)?);
        subjects.push(r.subject);
        modalities.push(r.modality);
        labels.push(r.label);
    }
    Ok(Pool {
        x: Matrix::from_vec(n, q, data)?,
        subjects,
        modalities,
        labels,
    })
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

fn should_log(epoch: usize, total: usize, every: usize) -> bool {
    epoch == 1 || epoch == total || epoch % every == 0
}

fn mean_of(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

pub struct EncoderPhase {
    pub encoder: EncoderModel,
    pub classifier: DomainClassifier,
    pub log: TrainLog,
}

/// Phase one. Standardization statistics come from every subject of
/// `cohort`, which is therefore expected to hold training subjects only.
pub fn train_encoder(cohort: &Cohort, config: &TrainConfig) -> Result<EncoderPhase> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::InsufficientData("empty training cohort".into()));
    }
    let manifest = cohort.manifest();
    let all: Vec<usize> = (0..cohort.len()).collect();
    let stats = standardization_stats(cohort, &all)?;
    let pool = record_pool(cohort, &stats)?;

    let mut init = seeded_rng(derive_seed(config.seed, STREAM_ENCODER_INIT));
    let mut encoder = EncoderModel::new(
        manifest.num_rois,
        config.hidden,
        config.embedding_dim,
        stats,
        &mut init,
    )?;
    let mut classifier = DomainClassifier::new(
        config.embedding_dim,
        config.hidden,
        manifest.num_modalities(),
        &mut init,
    );
    let mut opt = AdamW::new(config.optimizer());
    let loss_config = config.loss_config();
    let mut shuffle = seeded_rng(derive_seed(config.seed, STREAM_ENCODER_SHUFFLE));
    let mut order: Vec<usize> = (0..pool.x.rows()).collect();
    let mut log = TrainLog::default();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let (mut da, mut con, mut mc, mut le, mut gn) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut batches, mut con_batches, mut skipped) = (0, 0, 0);
        for idx in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let input = tape.constant(pool.x.select_rows(idx));
            let z = encoder.forward_tape(&mut tape, input)?;
            let (loss, report) = encoder_loss(
                &mut tape,
                z,
                &pick(&pool.labels, idx),
                &pick(&pool.modalities, idx),
                &pick(&pool.subjects, idx),
                &classifier,
                manifest.num_labels(),
                &loss_config,
            )?;
            let grads = tape.backward(loss)?;
            opt.step(&mut [&mut encoder, &mut classifier], &grads)?;

            batches += 1;
            da += report.l_da;
            mc += report.l_mc;
            le += report.l_e;
            gn += grads.norm_with_prefix("encoder.");
            match report.l_contrastive {
                Some(c) => {
                    con += c;
                    con_batches += 1;
                }
                None => skipped += 1,
            }
        }
        if should_log(epoch, config.epochs, config.log_every) {
            log.entries.push(EpochLog {
                epoch,
                l_da: mean_of(da, batches),
                l_contrastive: mean_of(con, con_batches),
                l_mc: mean_of(mc, batches).filter(|_| config.use_mc),
                l_e: mean_of(le, batches),
                l_d: None,
                grad_norm: gn / batches as f64,
                contrastive_skipped: skipped,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    log.seconds = start.elapsed().as_secs_f64();
    Ok(EncoderPhase {
        encoder,
        classifier,
        log,
    })
}

/// Phase two. The encoder is only read: embeddings are computed once,
/// outside any tape, so no gradient can reach it.
pub fn train_decoder(
    cohort: &Cohort,
    encoder: &EncoderModel,
    config: &TrainConfig,
) -> Result<(DecoderModel, TrainLog)> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::InsufficientData("empty training cohort".into()));
    }
    let manifest = cohort.manifest();
    let pool = record_pool(cohort, encoder.stats())?;
    let embeddings = encoder.embed_standardized(&pool.x)?;

    let mut init = seeded_rng(derive_seed(config.seed, STREAM_DECODER_INIT));
    let mut decoder = DecoderModel::new(
        encoder.embedding_dim(),
        manifest.num_modalities(),
        config.hidden,
        manifest.num_rois,
        &mut init,
    );
    let mut opt = AdamW::new(config.optimizer());
    let mut shuffle = seeded_rng(derive_seed(config.seed, STREAM_DECODER_SHUFFLE));
    let mut order: Vec<usize> = (0..pool.x.rows()).collect();
    let epochs = config.decoder_epochs.unwrap_or(config.epochs);
    let mut log = TrainLog::default();
    let start = Instant::now();

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle);
        let (mut ld, mut gn, mut batches) = (0.0, 0.0, 0);
        for idx in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let z = tape.constant(embeddings.select_rows(idx));
            let condition = decoder.condition(&pick(&pool.modalities, idx))?;
            let target = pool.x.select_rows(idx);
            let loss = decoder_loss(&mut tape, &target, z, &condition, &decoder)?;
            let grads = tape.backward(loss)?;
            if let Some(name) = grads.names().find(|n| !n.starts_with("decoder.")) {
                return Err(Error::TapeState(if name.starts_with("encoder.") {
                    "encoder received a gradient during decoder training"
                } else {
                    "unexpected parameter during decoder training"
                }));
            }
            opt.step(&mut [&mut decoder], &grads)?;
            ld += tape.value(loss).item();
            gn += grads.norm_with_prefix("decoder.");
            batches += 1;
        }
        if should_log(epoch, epochs, config.log_every) {
            log.entries.push(EpochLog {
                epoch,
                l_d: mean_of(ld, batches),
                grad_norm: gn / batches as f64,
                seconds: start.elapsed().as_secs_f64(),
                ..EpochLog::default()
            });
        }
    }
    log.seconds = start.elapsed().as_secs_f64();
    Ok((decoder, log))
}

/// Mean squared reconstruction error, in standardized units, of every
/// observed record of `cohort`.
pub fn reconstruction_mse(
    cohort: &Cohort,
    encoder: &EncoderModel,
    decoder: &DecoderModel,
) -> Result<f64> {
    let pool = record_pool(cohort, encoder.stats())?;
    let z = encoder.embed_standardized(&pool.x)?;
    let cond = decoder.condition(&pool.modalities)?;
    let out = decoder.net().forward(&z.concat_cols(&cond)?)?;
    let diff = out.sub(&pool.x)?;
    Ok(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.data().len() as f64)
}

pub struct TrainedModels {
    pub encoder: EncoderModel,
    pub classifier: DomainClassifier,
    pub decoder: DecoderModel,
    pub encoder_log: TrainLog,
    pub decoder_log: TrainLog,
}

/// Both phases back to back.
pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<TrainedModels> {
    let phase = train_encoder(cohort, config)?;
    let (decoder, decoder_log) = train_decoder(cohort, &phase.encoder, config)?;
    Ok(TrainedModels {
        encoder: phase.encoder,
        classifier: phase.classifier,
        decoder,
        encoder_log: phase.log,
        decoder_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Manifest, SyntheticSpec};
    use crate::numerics::Parameters;

    fn tiny_cohort(seed: u64, k: usize) -> Cohort {
        let spec = SyntheticSpec {
            num_subjects: k,
            manifest: Manifest {
                num_rois: 6,
                modalities: vec!["CT".into(), "TAU".into(), "FDG".into()],
                ..Manifest::default()
            },
            retention: vec![vec![0.8; 4]; 3],
            seed,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            hidden: 16,
            embedding_dim: 8,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn weights(p: &dyn Parameters) -> Vec<u64> {
        let mut out = Vec::new();
        p.visit_params(&mut |_, m| out.extend(m.data().iter().map(|v| v.to_bits())));
        out
    }

    #[test]
    fn encoder_phase_is_deterministic() {
        let c = tiny_cohort(1, 40);
        let a = train_encoder(&c, &small_config()).unwrap();
        let b = train_encoder(&c, &small_config()).unwrap();
        assert_eq!(weights(&a.encoder), weights(&b.encoder));
        assert_eq!(weights(&a.classifier), weights(&b.classifier));
        assert_eq!(a.log.entries.len(), 3);
    }

    #[test]
    fn log_totals_add_up() {
        let c = tiny_cohort(2, 40);
        let config = TrainConfig {
            batch_size: 1000,
            ..small_config()
        };
        let phase = train_encoder(&c, &config).unwrap();
        for e in &phase.log.entries {
            let sum = e.l_da.unwrap() + e.l_contrastive.unwrap() + e.l_mc.unwrap();
            assert!((sum - e.l_e.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_phase_leaves_encoder_untouched() {
        let c = tiny_cohort(3, 30);
        let phase = train_encoder(&c, &small_config()).unwrap();
        let before = weights(&phase.encoder);
        let (_, log) = train_decoder(&c, &phase.encoder, &small_config()).unwrap();
        assert_eq!(before, weights(&phase.encoder));
        assert!(log
            .entries
            .iter()
            .all(|e| e.l_d.is_some() && e.l_e.is_none()));
    }

    #[test]
    fn single_label_batches_skip_the_contrastive_term() {
        let mut c = tiny_cohort(4, 12).into_subjects();
        c.iter_mut().for_each(|s| s.label = 2);
        let c = Cohort::new(
            Manifest {
                num_rois: 6,
                modalities: vec!["CT".into(), "TAU".into(), "FDG".into()],
                ..Manifest::default()
            },
            c,
        )
        .unwrap();
        let phase = train_encoder(&c, &small_config()).unwrap();
        for e in &phase.log.entries {
            assert_eq!(e.l_contrastive, None);
            assert!(e.contrastive_skipped > 0);
            assert!((e.l_da.unwrap() + e.l_mc.unwrap() - e.l_e.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_csv_has_one_row_per_logged_epoch() {
        let c = tiny_cohort(5, 20);
        let config = TrainConfig {
            epochs: 10,
            log_every: 4,
            ..small_config()
        };
        let phase = train_encoder(&c, &config).unwrap();
        let epochs: Vec<usize> = phase.log.entries.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![1, 4, 8, 10]);
        let mut buf = Vec::new();
        phase.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,l_da,l_contrastive,l_mc,l_e,grad_norm,seconds\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn rejects_invalid_configs() {
        let c = tiny_cohort(6, 10);
        for bad in [
            TrainConfig {
                epochs: 0,
                ..small_config()
            },
            TrainConfig {
                batch_size: 0,
                ..small_config()
            },
            TrainConfig {
                lr: -1.0,
                ..small_config()
            },
            TrainConfig {
                tau: 0.0,
                ..small_config()
            },
        ] {
            assert!(matches!(train_encoder(&c, &bad), Err(Error::Config(_))));
        }
    }
}
