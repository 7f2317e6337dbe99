//! Encoder and decoder training objectives.
//!
//! The contrastive and coherence terms are computed directly on an embedding
//! matrix together with their closed-form gradient, then attached to a tape
//! with [`Tape::scalar_with_grad`]. The domain-adversarial and reconstruction
//! terms are composed from tape primitives because they involve the
//! classifier and decoder parameters.
//!
//! Labels and modality ids are zero-based indices into the manifest's
//! ordered lists; label distances are therefore unchanged from the one-based
//! severity scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};
use crate::model::{DecoderModel, DomainClassifier};
use crate::numerics::{Matrix, NodeId, Tape};

/// Tolerance on row norms accepted by [`LabeledBatch::new`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Which contrastive objective the encoder is trained with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Ordinal contrastive loss with distance-scaled negative temperatures.
    #[default]
    Ocl,
    /// Supervised contrastive loss with a single temperature.
    Scl,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ocl" => Ok(LossMode::Ocl),
            "scl" => Ok(LossMode::Scl),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// Embeddings of one batch together with their supervision.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
    modalities: Vec<usize>,
    subjects: Vec<usize>,
    num_labels: usize,
    num_modalities: usize,
}

impl LabeledBatch {
    pub fn new(
        embeddings: Matrix,
        labels: Vec<usize>,
        modalities: Vec<usize>,
        subjects: Vec<usize>,
        num_labels: usize,
        num_modalities: usize,
    ) -> Result<Self> {
        let b = embeddings.rows();
        for (what, len) in [
            ("labels", labels.len()),
            ("modalities", modalities.len()),
            ("subjects", subjects.len()),
        ] {
            if len != b {
                return Err(Error::Dimension {
                    op: what,
                    left: embeddings.shape(),
                    right: Shape(len, 1),
                });
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_labels) {
            return Err(Error::Label(format!("label {y} outside 0..{num_labels}")));
        }
        if let Some(&s) = modalities.iter().find(|&&s| s >= num_modalities) {
            return Err(Error::Label(format!(
                "modality id {s} outside 0..{num_modalities}"
            )));
        }
        for (r, row) in embeddings.row_iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                return Err(Error::DegenerateEmbedding { row: r, norm });
            }
        }
        Ok(LabeledBatch {
            embeddings,
            labels,
            modalities,
            subjects,
            num_labels,
            num_modalities,
        })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modalities(&self) -> &[usize] {
        &self.modalities
    }

    pub fn subjects(&self) -> &[usize] {
        &self.subjects
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_modalities(&self) -> usize {
        self.num_modalities
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn label_distance(a: usize, b: usize) -> usize {
    a.abs_diff(b)
}

/// Temperature of a negative pair: the base temperature divided by the label
/// distance, so farther labels are repelled more strongly.
pub fn negative_temperature(tau: f64, distance: usize) -> f64 {
    debug_assert!(distance >= 1);
    tau / distance as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositiveTemperature {
    pub tau: f64,
    /// The anchor had no negatives and the base temperature was used.
    pub fallback: bool,
}

/// Temperature shared by all positives of an anchor, chosen so the gradient
/// magnitudes toward positives and negatives balance:
/// `Σₙ exp(z·zₙ/τₙ) / Σₙ [exp(z·zₙ/τₙ)/τₙ]`, a weighted harmonic mean of the
/// negative temperatures. Falls back to `base_tau` when there are no
/// negatives.
pub fn adaptive_positive_temperature(
    anchor: &[f64],
    negatives: &[(&[f64], f64)],
    base_tau: f64,
) -> PositiveTemperature {
    let logits: Vec<(f64, f64)> = negatives
        .iter()
        .map(|(z, t)| (crate::numerics::dot(anchor, z) / t, *t))
        .collect();
    positive_temperature_from_logits(&logits, base_tau)
}

/// `(logit, temperature)` pairs for the negatives of one anchor.
fn positive_temperature_from_logits(logits: &[(f64, f64)], base_tau: f64) -> PositiveTemperature {
    if logits.is_empty() {
        return PositiveTemperature {
            tau: base_tau,
            fallback: true,
        };
    }
    // The ratio is invariant to a common shift of the logits.
    let max = logits.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &(a, t) in logits {
        let w = (a - max).exp();
        num += w;
        den += w / t;
    }
    PositiveTemperature {
        tau: num / den,
        fallback: false,
    }
}

/// Per-anchor positive temperatures of the ordinal loss for a whole batch.
/// `None` marks anchors without positives.
pub fn positive_temperatures(batch: &LabeledBatch, tau: f64) -> Vec<Option<PositiveTemperature>> {
    let z = batch.embeddings();
    let y = batch.labels();
    (0..batch.len())
        .map(|i| {
            if !(0..batch.len()).any(|j| j != i && y[j] == y[i]) {
                return None;
            }
            let negatives: Vec<(&[f64], f64)> = (0..batch.len())
                .filter(|&n| y[n] != y[i])
                .map(|n| {
                    (
                        z.row(n),
                        negative_temperature(tau, label_distance(y[i], y[n])),
                    )
                })
                .collect();
            Some(adaptive_positive_temperature(z.row(i), &negatives, tau))
        })
        .collect()
}

/// Value and embedding gradient of a contrastive objective.
#[derive(Clone, Debug)]
pub struct ContrastiveOutput {
    pub value: f64,
    pub grad: Matrix,
    pub anchors_used: usize,
    pub fallback_anchors: usize,
}

pub fn supervised_contrastive_loss(batch: &LabeledBatch, tau: f64) -> Result<ContrastiveOutput> {
    contrastive(batch, tau, LossMode::Scl)
}

/// Ordinal contrastive loss. Each anchor's positive temperature is computed
/// from the current embeddings and then held constant: no gradient flows
/// through it.
pub fn ordinal_contrastive_loss(batch: &LabeledBatch, tau: f64) -> Result<ContrastiveOutput> {
    contrastive(batch, tau, LossMode::Ocl)
}

pub fn contrastive_loss(
    batch: &LabeledBatch,
    tau: f64,
    mode: LossMode,
) -> Result<ContrastiveOutput> {
    contrastive(batch, tau, mode)
}

fn contrastive(batch: &LabeledBatch, tau: f64, mode: LossMode) -> Result<ContrastiveOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let b = batch.len();
    if b < 2 {
        return Err(Error::InsufficientBatch(b));
    }
    let y = batch.labels();
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::NoValidAnchors);
    }
    let z = batch.embeddings();

    // Row i of `coeff` starts as the dot products z_i·z_j and is overwritten
    // with dL/d(z_i·z_j) once anchor i has been processed.
    let mut coeff = z.matmul_t(z)?;
    let mut class_size = vec![0usize; batch.num_labels()];
    for &l in y {
        class_size[l] += 1;
    }

    let mut per_anchor = vec![0.0; b];
    let mut used = vec![false; b];
    let mut fallback = 0;
    let mut logits = vec![0.0; b];
    let mut temps = vec![0.0; b];
    let mut neg_logits: Vec<(f64, f64)> = Vec::with_capacity(b);

    for i in 0..b {
        let positives = class_size[y[i]] - 1;
        let row = coeff.row_mut(i);
        if positives == 0 {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        neg_logits.clear();
        for j in 0..b {
            if y[j] != y[i] {
                let t = match mode {
                    LossMode::Scl => tau,
                    LossMode::Ocl => negative_temperature(tau, label_distance(y[i], y[j])),
                };
                temps[j] = t;
                logits[j] = row[j] / t;
                neg_logits.push((logits[j], t));
            }
        }
        let tau_pos = match mode {
            LossMode::Scl => tau,
            LossMode::Ocl => {
                let pt = positive_temperature_from_logits(&neg_logits, tau);
                if pt.fallback {
                    fallback += 1;
                }
                pt.tau
            }
        };
        let mut max = f64::NEG_INFINITY;
        let mut positive_logit_sum = 0.0;
        for j in 0..b {
            if j == i {
                continue;
            }
            if y[j] == y[i] {
                temps[j] = tau_pos;
                logits[j] = row[j] / tau_pos;
                positive_logit_sum += logits[j];
            }
            max = max.max(logits[j]);
        }
        let mut total = 0.0;
        for j in 0..b {
            if j != i {
                logits[j] = (logits[j] - max).exp();
                total += logits[j];
            }
        }
        let log_denominator = max + total.ln();
        per_anchor[i] = log_denominator - positive_logit_sum / positives as f64;
        used[i] = true;

        let inv_p = 1.0 / positives as f64;
        for j in 0..b {
            row[j] = if j == i {
                0.0
            } else {
                let softmax = logits[j] / total;
                let target = if y[j] == y[i] { inv_p } else { 0.0 };
                (softmax - target) / temps[j]
            };
        }
    }

    let anchors_used = used.iter().filter(|&&u| u).count();
    if anchors_used == 0 {
        return Err(Error::NoValidAnchors);
    }
    let scale = 1.0 / anchors_used as f64;
    let value = per_anchor.iter().sum::<f64>() * scale;

    // d/dz of Σ_ij C_ij z_i·z_j is (C + Cᵀ) Z.
    let mut sym = coeff;
    for i in 0..b {
        for j in (i + 1)..b {
            let s = sym.get(i, j) + sym.get(j, i);
            sym.set(i, j, s);
            sym.set(j, i, s);
        }
        let d = sym.get(i, i);
        sym.set(i, i, 2.0 * d);
    }
    let mut grad = sym.matmul(z)?;
    grad.scale_in_place(scale);

    Ok(ContrastiveOutput {
        value,
        grad,
        anchors_used,
        fallback_anchors: fallback,
    })
}

/// Value and embedding gradient of the modality-coherence term.
#[derive(Clone, Debug)]
pub struct CoherenceOutput {
    pub value: f64,
    pub grad: Matrix,
    /// Ordered same-subject, different-modality pairs in the batch.
    pub pairs: usize,
}

/// Negative mean cosine similarity over ordered pairs of embeddings that
/// share a subject but not a modality. Rows are unit-norm, so the cosine is
/// the dot product. Zero when the batch holds no such pair.
pub fn modality_coherence_loss(batch: &LabeledBatch) -> CoherenceOutput {
    let z = batch.embeddings();
    let mut by_subject: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in batch.subjects().iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut total = 0.0;
    let mut pairs = 0usize;
    for members in by_subject.values().filter(|m| m.len() > 1) {
        for &i in members {
            for &j in members {
                if i == j || batch.modalities()[i] == batch.modalities()[j] {
                    continue;
                }
                total += crate::numerics::dot(z.row(i), z.row(j));
                pairs += 1;
                // Each ordered pair contributes z_j to the gradient of z_i;
                // the mirrored pair is visited separately.
                let zj = z.row(j).to_vec();
                for (g, v) in grad.row_mut(i).iter_mut().zip(zj) {
                    *g += 2.0 * v;
                }
            }
        }
    }
    if pairs == 0 {
        return CoherenceOutput {
            value: 0.0,
            grad,
            pairs: 0,
        };
    }
    let scale = -1.0 / pairs as f64;
    grad.scale_in_place(scale);
    CoherenceOutput {
        value: total * scale,
        grad,
        pairs,
    }
}

/// Mean cross-entropy of the modality classifier on embeddings routed
/// through a gradient reversal layer: the classifier parameters descend the
/// loss while everything upstream of `embeddings` receives the gradient
/// negated and scaled by `lambda_rev`.
pub fn domain_adversarial_loss(
    tape: &mut Tape,
    embeddings: NodeId,
    modalities: &[usize],
    classifier: &DomainClassifier,
    lambda_rev: f64,
) -> Result<NodeId> {
    if !(lambda_rev >= 0.0) {
        return Err(Error::Config(format!(
            "gradient reversal strength must be non-negative, got {lambda_rev}"
        )));
    }
    let s = classifier.num_modalities();
    if let Some(&m) = modalities.iter().find(|&&m| m >= s) {
        return Err(Error::Label(format!("modality id {m} outside 0..{s}")));
    }
    let reversed = tape.scale_gradient(embeddings, -lambda_rev);
    let logits = classifier.forward_tape(tape, reversed)?;
    tape.softmax_cross_entropy(logits, modalities)
}

/// Self-reconstruction error of the decoder: mean over batch and ROI of
/// `(x − D([z, c]))²`.
pub fn decoder_loss(
    tape: &mut Tape,
    target: &Matrix,
    embeddings: NodeId,
    condition: &Matrix,
    decoder: &DecoderModel,
) -> Result<NodeId> {
    let c = tape.constant(condition.clone());
    let out = decoder.forward_tape(tape, embeddings, c)?;
    if tape.value(out).shape() != target.shape() {
        return Err(Error::Dimension {
            op: "decoder_loss",
            left: target.shape(),
            right: tape.value(out).shape(),
        });
    }
    tape.mse(out, target)
}

/// Settings of the composite encoder objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderLossConfig {
    pub tau: f64,
    pub lambda_rev: f64,
    pub mode: LossMode,
    pub use_mc: bool,
}

impl Default for EncoderLossConfig {
    fn default() -> Self {
        EncoderLossConfig {
            tau: 0.1,
            lambda_rev: 1.0,
            mode: LossMode::Ocl,
            use_mc: true,
        }
    }
}

/// Per-step loss values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_da: f64,
    /// `None` when the batch had no valid contrastive anchor.
    pub l_contrastive: Option<f64>,
    pub l_mc: f64,
    pub l_e: f64,
    pub l_d: Option<f64>,
    pub grad_norm_encoder: f64,
    pub n_anchors_used: usize,
    pub n_fallback_anchors: usize,
    pub n_mc_pairs: usize,
}

/// Builds the composite encoder loss `L_DA + L_contrastive + L_MC` on the
/// tape. `embeddings` must be the encoder output node of the batch.
pub fn encoder_loss(
    tape: &mut Tape,
    embeddings: NodeId,
    labels: &[usize],
    modalities: &[usize],
    subjects: &[usize],
    classifier: &DomainClassifier,
    num_labels: usize,
    config: &EncoderLossConfig,
) -> Result<(NodeId, LossReport)> {
    let batch = LabeledBatch::new(
        tape.value(embeddings).clone(),
        labels.to_vec(),
        modalities.to_vec(),
        subjects.to_vec(),
        num_labels,
        classifier.num_modalities(),
    )?;
    let mut report = LossReport::default();
    let mut terms = Vec::with_capacity(3);

    let da = domain_adversarial_loss(tape, embeddings, modalities, classifier, config.lambda_rev)?;
    report.l_da = tape.value(da).item();
    terms.push(da);

    match contrastive(&batch, config.tau, config.mode) {
        Ok(out) => {
            report.l_contrastive = Some(out.value);
            report.n_anchors_used = out.anchors_used;
            report.n_fallback_anchors = out.fallback_anchors;
            terms.push(tape.scalar_with_grad(embeddings, out.value, out.grad)?);
        }
        Err(Error::NoValidAnchors | Error::InsufficientBatch(_)) => {}
        Err(e) => return Err(e),
    }

    if config.use_mc {
        let mc = modality_coherence_loss(&batch);
        report.l_mc = mc.value;
        report.n_mc_pairs = mc.pairs;
        if mc.pairs > 0 {
            terms.push(tape.scalar_with_grad(embeddings, mc.value, mc.grad)?);
        }
    }

    let total = tape.sum(&terms)?;
    report.l_e = tape.value(total).item();
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Matrix};
    use rand::RngExt;

    fn unit_rows(rows: &[&[f64]]) -> Matrix {
        let normed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        Matrix::from_rows(&normed).unwrap()
    }

    fn random_batch(b: usize, m: usize, labels: &[usize], seed: u64) -> LabeledBatch {
        let mut rng = seeded_rng(seed);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let v = labels.iter().max().unwrap() + 1;
        LabeledBatch::new(
            unit_rows(&refs),
            labels.to_vec(),
            vec![0; b],
            (0..b).collect(),
            v.max(2),
            1,
        )
        .unwrap()
    }

    /// Straight-line evaluation of the contrastive formula for one batch;
    /// `tau_pos[i]` overrides the positive temperature of anchor i.
    fn direct_contrastive(batch: &LabeledBatch, tau: f64, ordinal: bool) -> f64 {
        let z = batch.embeddings();
        let y = batch.labels();
        let b = batch.len();
        let dot =
            |i: usize, j: usize| -> f64 { (0..z.cols()).map(|c| z.get(i, c) * z.get(j, c)).sum() };
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..b {
            let pos: Vec<usize> = (0..b).filter(|&j| j != i && y[j] == y[i]).collect();
            let neg: Vec<usize> = (0..b).filter(|&j| y[j] != y[i]).collect();
            if pos.is_empty() {
                continue;
            }
            let t_neg = |n: usize| {
                if ordinal {
                    tau / (y[i] as f64 - y[n] as f64).abs()
                } else {
                    tau
                }
            };
            let t_pos = if ordinal {
                let num: f64 = neg.iter().map(|&n| (dot(i, n) / t_neg(n)).exp()).sum();
                let den: f64 = neg
                    .iter()
                    .map(|&n| (dot(i, n) / t_neg(n)).exp() / t_neg(n))
                    .sum();
                num / den
            } else {
                tau
            };
            let denom: f64 = pos.iter().map(|&q| (dot(i, q) / t_pos).exp()).sum::<f64>()
                + neg
                    .iter()
                    .map(|&n| (dot(i, n) / t_neg(n)).exp())
                    .sum::<f64>();
            let s: f64 = pos
                .iter()
                .map(|&p| ((dot(i, p) / t_pos).exp() / denom).ln())
                .sum();
            total += -s / pos.len() as f64;
            anchors += 1;
        }
        total / anchors as f64
    }

    #[test]
    fn label_distance_cases() {
        assert_eq!(label_distance(0, 3), 3);
        assert_eq!(label_distance(1, 1), 0);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(label_distance(a, b), label_distance(b, a));
            }
        }
    }

    #[test]
    fn scl_matches_direct_formula_on_hand_batch() {
        let z = unit_rows(&[&[1.0, 0.0], &[0.8, 0.6], &[0.0, 1.0], &[-0.6, 0.8]]);
        let batch =
            LabeledBatch::new(z, vec![0, 0, 1, 1], vec![0; 4], vec![0, 1, 2, 3], 2, 1).unwrap();
        let got = supervised_contrastive_loss(&batch, 0.5).unwrap();
        let expect = direct_contrastive(&batch, 0.5, false);
        assert!(
            (got.value - expect).abs() < 1e-12,
            "{} vs {}",
            got.value,
            expect
        );
        assert_eq!(got.anchors_used, 4);
    }

    #[test]
    fn ocl_matches_direct_formula_on_three_labels() {
        let z = unit_rows(&[
            &[1.0, 0.1],
            &[0.9, 0.3],
            &[0.5, 0.5],
            &[0.3, 0.9],
            &[-0.2, 1.0],
            &[-0.5, 0.7],
        ]);
        let batch = LabeledBatch::new(
            z,
            vec![0, 0, 1, 1, 2, 2],
            vec![0; 6],
            (0..6).collect(),
            3,
            1,
        )
        .unwrap();
        let got = ordinal_contrastive_loss(&batch, 0.1).unwrap();
        let expect = direct_contrastive(&batch, 0.1, true);
        assert!(
            (got.value - expect).abs() < 1e-10,
            "{} vs {}",
            got.value,
            expect
        );
    }

    #[test]
    fn two_labels_reduce_ocl_to_scl() {
        for seed in 0..10 {
            let batch = random_batch(8, 4, &[2, 3, 2, 3, 3, 2, 2, 3], seed);
            let a = ordinal_contrastive_loss(&batch, 0.1).unwrap();
            let b = supervised_contrastive_loss(&batch, 0.1).unwrap();
            assert!((a.value - b.value).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_label_batch_has_no_valid_anchor() {
        let batch = random_batch(5, 3, &[1, 1, 1, 1, 1], 4);
        assert!(matches!(
            supervised_contrastive_loss(&batch, 0.1),
            Err(Error::NoValidAnchors)
        ));
        assert!(matches!(
            ordinal_contrastive_loss(&batch, 0.1),
            Err(Error::NoValidAnchors)
        ));
        let tiny = random_batch(1, 3, &[0], 4);
        assert!(matches!(
            ordinal_contrastive_loss(&tiny, 0.1),
            Err(Error::InsufficientBatch(1))
        ));
    }

    #[test]
    fn anchors_without_positives_are_skipped() {
        let batch = random_batch(5, 3, &[0, 0, 1, 2, 3], 11);
        let out = ordinal_contrastive_loss(&batch, 0.1).unwrap();
        assert_eq!(out.anchors_used, 2);
        let expect = direct_contrastive(&batch, 0.1, true);
        assert!((out.value - expect).abs() < 1e-10);
        // skipped anchors still receive gradient as positives/negatives of others
        assert!(out.grad.row(4).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn positive_temperature_examples() {
        let anchor = [1.0, 0.0];
        let n1 = [0.6, 0.8];
        let n2 = [0.0, 1.0];
        // constant distance: harmonic mean of a constant
        let pt = adaptive_positive_temperature(&anchor, &[(&n1, 0.05), (&n2, 0.05)], 0.1);
        assert!((pt.tau - 0.05).abs() < 1e-15 && !pt.fallback);

        // d = 1 and d = 2 with tau = 0.1: dot products 0.6 and 0.0
        let pt = adaptive_positive_temperature(&anchor, &[(&n1, 0.1), (&n2, 0.05)], 0.1);
        let e1 = (0.6f64 / 0.1).exp();
        let e2 = (0.0f64 / 0.05).exp();
        let expect = (e1 + e2) / (e1 / 0.1 + e2 / 0.05);
        assert!((pt.tau - expect).abs() < 1e-15);
        assert!(pt.tau >= 0.05 && pt.tau <= 0.1);
        let lhs = e1 / 0.1 + e2 / 0.05;
        let rhs = (e1 + e2) / pt.tau;
        assert!((lhs - rhs).abs() <= 1e-9 * lhs);

        let pt = adaptive_positive_temperature(&anchor, &[], 0.1);
        assert_eq!(
            pt,
            PositiveTemperature {
                tau: 0.1,
                fallback: true
            }
        );
    }

    #[test]
    fn coherence_examples() {
        let z = unit_rows(&[&[0.6, 0.8], &[0.6, 0.8]]);
        let batch = LabeledBatch::new(z, vec![0, 0], vec![0, 1], vec![7, 7], 2, 2).unwrap();
        let out = modality_coherence_loss(&batch);
        assert!((out.value + 1.0).abs() < 1e-15);
        assert_eq!(out.pairs, 2);

        let z = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let batch = LabeledBatch::new(z, vec![0, 0], vec![0, 1], vec![7, 7], 2, 2).unwrap();
        assert_eq!(modality_coherence_loss(&batch).value, 0.0);

        let z = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let batch = LabeledBatch::new(z, vec![0, 0], vec![0, 1], vec![1, 2], 2, 2).unwrap();
        let out = modality_coherence_loss(&batch);
        assert_eq!((out.value, out.pairs), (0.0, 0));
    }

    #[test]
    fn coherence_matches_pairwise_mean() {
        let mut rng = seeded_rng(5);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let z = unit_rows(&refs);
        let subjects = vec![0, 0, 1, 1, 2, 2];
        let modalities = vec![0, 2, 1, 3, 0, 1];
        let batch = LabeledBatch::new(z.clone(), vec![0; 6], modalities, subjects, 2, 4).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let expect =
            -(cos(&rows[0], &rows[1]) + cos(&rows[2], &rows[3]) + cos(&rows[4], &rows[5])) / 3.0;
        let out = modality_coherence_loss(&batch);
        assert!((out.value - expect).abs() < 1e-12);
        assert_eq!(out.pairs, 6);
    }

    #[test]
    fn batch_validation() {
        let z = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        assert!(LabeledBatch::new(z, vec![0], vec![0], vec![0], 2, 2).is_err());
        let z = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            LabeledBatch::new(z.clone(), vec![2], vec![0], vec![0], 2, 2),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            LabeledBatch::new(z, vec![0], vec![5], vec![0], 2, 2),
            Err(Error::Label(_))
        ));
    }
}
