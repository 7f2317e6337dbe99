//! The encoder, the modality-conditioned decoder and the modality
//! classifier, all built from the same dense ReLU network.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, HParams, CHECKPOINT_VERSION};

use rand::RngExt;

use crate::data::NormStats;
use crate::error::{Error, Result, Shape};
use crate::numerics::{Decay, Matrix, NodeId, Parameters, SeededRng, Tape};

/// One affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(n_in: usize, n_out: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let data = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            weight: Matrix::from_vec(n_in, n_out, data).expect("sized above"),
            bias: Matrix::zeros(1, n_out),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: Matrix::zeros(n_in, n_out),
            bias: Matrix::zeros(1, n_out),
        }
    }
}

/// Stack of dense layers with ReLU between consecutive layers and a linear
/// output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    name: String,
    layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` lists the input width, hidden widths and output width.
    pub fn new(name: impl Into<String>, widths: &[usize], rng: &mut SeededRng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Mlp {
            name: name.into(),
            layers,
        }
    }

    pub fn from_layers(name: impl Into<String>, layers: Vec<Dense>) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return Err(Error::Schema(format!("network `{name}` has no layers")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::Dimension {
                    op: "layer bias",
                    left: l.weight.shape(),
                    right: l.bias.shape(),
                });
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::Dimension {
                    op: "layer chain",
                    left: layers[i - 1].weight.shape(),
                    right: l.weight.shape(),
                });
            }
        }
        Ok(Mlp { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.name)
    }

    /// Records the forward pass on `tape`, registering every weight as a
    /// parameter.
    pub fn forward_tape(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(self.weight_name(i), &layer.weight);
            let b = tape.param(self.bias_name(i), &layer.bias);
            h = tape.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = h.matmul(&layer.weight)?;
            next.add_row_broadcast(&layer.bias)?;
            if i + 1 < self.layers.len() {
                next.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        Ok(h)
    }
}

impl Parameters for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (i, layer) in self.layers.iter().enumerate() {
            f(&self.weight_name(i), &layer.weight);
            f(&self.bias_name(i), &layer.bias);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, Decay)) {
        for i in 0..self.layers.len() {
            let (wn, bn) = (self.weight_name(i), self.bias_name(i));
            let layer = &mut self.layers[i];
            f(&wn, &mut layer.weight, Decay::Apply);
            f(&bn, &mut layer.bias, Decay::Skip);
        }
    }
}

fn l2_normalize_rows(mut m: Matrix) -> Result<Matrix> {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= 1e-12) {
            return Err(Error::DegenerateEmbedding { row: r, norm });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(m)
}

/// Maps standardized ROI vectors of any modality to unit-norm embeddings.
/// The network is shared by all modalities; only the input standardization
/// depends on the modality.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    net: Mlp,
    stats: NormStats,
}

impl EncoderModel {
    pub const NAME: &'static str = "encoder";

    pub fn new(
        num_rois: usize,
        hidden: usize,
        embedding_dim: usize,
        stats: NormStats,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::from_parts(
            Mlp::new(Self::NAME, &[num_rois, hidden, embedding_dim], rng),
            stats,
        )
    }

    pub fn from_parts(net: Mlp, stats: NormStats) -> Result<Self> {
        if stats.num_rois() != net.input_dim() {
            return Err(Error::Dimension {
                op: "encoder stats",
                left: Shape(1, net.input_dim()),
                right: Shape(1, stats.num_rois()),
            });
        }
        Ok(EncoderModel { net, stats })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn num_rois(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Records the encoder on `tape` for already standardized input.
    pub fn forward_tape(&self, tape: &mut Tape, standardized: NodeId) -> Result<NodeId> {
        let h = self.net.forward_tape(tape, standardized)?;
        tape.l2_normalize_rows(h)
    }

    /// Embeds already standardized rows.
    pub fn embed_standardized(&self, standardized: &Matrix) -> Result<Matrix> {
        l2_normalize_rows(self.net.forward(standardized)?)
    }

    /// Standardizes each raw row with its modality's statistics, then embeds.
    pub fn encode(&self, raw: &Matrix, modalities: &[usize]) -> Result<Matrix> {
        if raw.rows() != modalities.len() {
            return Err(Error::Dimension {
                op: "encode",
                left: raw.shape(),
                right: Shape(modalities.len(), 1),
            });
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let mut x = raw.clone();
        for (r, &m) in modalities.iter().enumerate() {
            let row = self.stats.standardize(m, raw.row(r))?;
            x.row_mut(r).copy_from_slice(&row);
        }
        self.embed_standardized(&x)
    }
}

impl Parameters for EncoderModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, Decay)) {
        self.net.visit_params_mut(f)
    }
}

/// Reconstructs standardized ROI vectors from an embedding concatenated
/// with a one-hot modality condition.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderModel {
    net: Mlp,
    num_modalities: usize,
}

impl DecoderModel {
    pub const NAME: &'static str = "decoder";

    pub fn new(
        embedding_dim: usize,
        num_modalities: usize,
        hidden: usize,
        num_rois: usize,
        rng: &mut SeededRng,
    ) -> Self {
        DecoderModel {
            net: Mlp::new(
                Self::NAME,
                &[embedding_dim + num_modalities, hidden, num_rois],
                rng,
            ),
            num_modalities,
        }
    }

    pub fn from_parts(net: Mlp, num_modalities: usize) -> Result<Self> {
        if net.input_dim() <= num_modalities {
            return Err(Error::Schema(format!(
                "decoder input width {} leaves no room for {num_modalities} condition columns",
                net.input_dim()
            )));
        }
        Ok(DecoderModel {
            net,
            num_modalities,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn num_modalities(&self) -> usize {
        self.num_modalities
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.input_dim() - self.num_modalities
    }

    pub fn num_rois(&self) -> usize {
        self.net.output_dim()
    }

    /// One-hot condition rows for `targets`.
    pub fn condition(&self, targets: &[usize]) -> Result<Matrix> {
        Matrix::one_hot(targets, self.num_modalities).map_err(|_| {
            Error::Label(format!(
                "target modality outside 0..{}",
                self.num_modalities
            ))
        })
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        embeddings: NodeId,
        condition: NodeId,
    ) -> Result<NodeId> {
        let input = tape.concat_cols(embeddings, condition)?;
        self.net.forward_tape(tape, input)
    }

    /// Reconstruction in standardized units of `target_modality` for every
    /// embedding row.
    pub fn decode(&self, embeddings: &Matrix, target_modality: usize) -> Result<Matrix> {
        let c = self.condition(&vec![target_modality; embeddings.rows()])?;
        self.net.forward(&embeddings.concat_cols(&c)?)
    }
}

impl Parameters for DecoderModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, Decay)) {
        self.net.visit_params_mut(f)
    }
}

/// Predicts the modality of an embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainClassifier {
    net: Mlp,
}

impl DomainClassifier {
    pub const NAME: &'static str = "classifier";

    pub fn new(
        embedding_dim: usize,
        hidden: usize,
        num_modalities: usize,
        rng: &mut SeededRng,
    ) -> Self {
        DomainClassifier {
            net: Mlp::new(Self::NAME, &[embedding_dim, hidden, num_modalities], rng),
        }
    }

    pub fn from_parts(net: Mlp) -> Self {
        DomainClassifier { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn num_modalities(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward_tape(&self, tape: &mut Tape, embeddings: NodeId) -> Result<NodeId> {
        self.net.forward_tape(tape, embeddings)
    }

    pub fn logits(&self, embeddings: &Matrix) -> Result<Matrix> {
        self.net.forward(embeddings)
    }
}

impl Parameters for DomainClassifier {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, Decay)) {
        self.net.visit_params_mut(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModalityStats;
    use crate::numerics::seeded_rng;

    fn identity_stats(s: usize, q: usize) -> NormStats {
        NormStats::new(
            (0..s)
                .map(|_| ModalityStats {
                    mean: vec![0.0; q],
                    std: vec![1.0; q],
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_input(b: usize, q: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::from_vec(
            b,
            q,
            (0..b * q).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_degenerate_embeddings() {
        let net =
            Mlp::from_layers("encoder", vec![Dense::zeros(3, 4), Dense::zeros(4, 2)]).unwrap();
        let enc = EncoderModel::from_parts(net, identity_stats(2, 3)).unwrap();
        let err = enc.encode(&random_input(2, 3, 1), &[0, 1]).unwrap_err();
        assert!(matches!(err, Error::DegenerateEmbedding { .. }));
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let make =
            || EncoderModel::new(6, 16, 5, identity_stats(3, 6), &mut seeded_rng(9)).unwrap();
        let (a, b) = (make(), make());
        let x = random_input(7, 6, 2);
        let ids = [0, 1, 2, 0, 1, 2, 0];
        let za = a.encode(&x, &ids).unwrap();
        assert_eq!(za, b.encode(&x, &ids).unwrap());
        for row in za.row_iter() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert!(a.encode(&x, &[0, 1, 2, 0, 1, 2, 3]).is_err());
        let mut bad = x.clone();
        bad.set(0, 0, f64::NAN);
        assert!(matches!(a.encode(&bad, &ids), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let enc = EncoderModel::new(6, 16, 5, identity_stats(3, 6), &mut seeded_rng(4)).unwrap();
        let x = random_input(4, 6, 3);
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let z = enc.forward_tape(&mut tape, xn).unwrap();
        let plain = enc.embed_standardized(&x).unwrap();
        assert!(tape.value(z).sub(&plain).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn decoder_conditioning_reaches_output() {
        let dec = DecoderModel::new(5, 4, 16, 6, &mut seeded_rng(8));
        let z = random_input(3, 5, 5);
        let a = dec.decode(&z, 0).unwrap();
        let b = dec.decode(&z, 2).unwrap();
        assert_eq!(a.shape(), Shape(3, 6));
        assert_ne!(a, b);
        assert_eq!(a, dec.decode(&z, 0).unwrap());
        assert!(dec.decode(&z, 4).is_err());
        assert_eq!(
            dec.decode(&random_input(11, 5, 6), 1).unwrap().shape(),
            Shape(11, 6)
        );
    }

    #[test]
    fn classifier_width_is_modality_count() {
        let c = DomainClassifier::new(5, 8, 3, &mut seeded_rng(1));
        assert_eq!(c.num_modalities(), 3);
        assert_eq!(
            c.logits(&random_input(2, 5, 1)).unwrap().shape(),
            Shape(2, 3)
        );
    }
}
