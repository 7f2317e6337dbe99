//! Matrix-level reverse-mode differentiation.
//!
//! Every primitive pushes one node holding its forward value and whatever it
//! needs to run its adjoint. [`Tape::backward`] replays the adjoints in
//! reverse push order, which is a valid topological order because a node can
//! only reference nodes pushed before it.
//!
//! Loss functions whose adjoint is cheaper to derive in closed form than to
//! compose (the contrastive and coherence terms) enter the tape through
//! [`Tape::scalar_with_grad`]: the caller supplies the scalar value together
//! with its gradient with respect to a single input node.

use std::collections::BTreeMap;

use crate::error::{Error, Result, Shape};
use crate::numerics::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MatMul {
        left: NodeId,
        right: NodeId,
    },
    Relu {
        input: NodeId,
    },
    NormalizeRows {
        input: NodeId,
        norms: Vec<f64>,
    },
    ScaleGrad {
        input: NodeId,
        factor: f64,
    },
    ConcatCols {
        left: NodeId,
        right: NodeId,
    },
    Hadamard {
        left: NodeId,
        right: NodeId,
    },
    SumAll {
        input: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Matrix,
        targets: Vec<usize>,
    },
    Mse {
        input: NodeId,
        target: Matrix,
    },
    ScalarWithGrad {
        input: NodeId,
        grad: Matrix,
    },
    Sum {
        terms: Vec<NodeId>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    consumed: bool,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Matrix>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Euclidean norm over all parameters whose name starts with `prefix`.
    pub fn norm_with_prefix(&self, prefix: &str) -> f64 {
        self.0
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Matrix) {
        self.0.insert(name.into(), grad);
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A named trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: &Matrix) -> NodeId {
        let id = self.push(value.clone(), Op::Leaf, true);
        self.params.push((name.into(), id));
        id
    }

    /// `input · weight + bias`, bias broadcast over rows.
    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let mut out = self.value(input).matmul(self.value(weight))?;
        out.add_row_broadcast(self.value(bias))?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Affine {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn matmul(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let out = self.value(left).matmul(self.value(right))?;
        let needs = self.needs(left) || self.needs(right);
        Ok(self.push(out, Op::MatMul { left, right }, needs))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|v| v.max(0.0));
        let needs = self.needs(input);
        self.push(out, Op::Relu { input }, needs)
    }

    /// Scales each row to unit Euclidean norm. Rows with norm below `1e-12`
    /// are rejected.
    pub fn l2_normalize_rows(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateEmbedding { row: r, norm });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let needs = self.needs(input);
        Ok(self.push(out, Op::NormalizeRows { input, norms }, needs))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass. A negative factor is a gradient
    /// reversal layer.
    pub fn scale_gradient(&mut self, input: NodeId, factor: f64) -> NodeId {
        let out = self.value(input).clone();
        let needs = self.needs(input);
        self.push(out, Op::ScaleGrad { input, factor }, needs)
    }

    pub fn concat_cols(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let out = self.value(left).concat_cols(self.value(right))?;
        let needs = self.needs(left) || self.needs(right);
        Ok(self.push(out, Op::ConcatCols { left, right }, needs))
    }

    pub fn hadamard(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let out = self.value(left).hadamard(self.value(right))?;
        let needs = self.needs(left) || self.needs(right);
        Ok(self.push(out, Op::Hadamard { left, right }, needs))
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let out = Matrix::scalar(self.value(input).sum());
        let needs = self.needs(input);
        self.push(out, Op::SumAll { input }, needs)
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        if z.rows() != targets.len() || z.rows() == 0 {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: z.shape(),
                right: Shape(targets.len(), 1),
            });
        }
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= z.cols() {
                return Err(Error::Label(format!(
                    "class index {t} out of range 0..{}",
                    z.cols()
                )));
            }
            let row = probs.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
            loss += total.ln() + max - z.get(r, t);
        }
        loss /= targets.len() as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Mean squared error over every entry.
    pub fn mse(&mut self, input: NodeId, target: &Matrix) -> Result<NodeId> {
        let x = self.value(input);
        let diff = x.sub(target)?;
        let n = diff.data().len().max(1) as f64;
        let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
        let needs = self.needs(input);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Mse {
                input,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// A scalar whose gradient with respect to `input` was computed by the
    /// caller.
    pub fn scalar_with_grad(&mut self, input: NodeId, value: f64, grad: Matrix) -> Result<NodeId> {
        if grad.shape() != self.value(input).shape() {
            return Err(Error::Dimension {
                op: "scalar_with_grad",
                left: self.value(input).shape(),
                right: grad.shape(),
            });
        }
        let needs = self.needs(input);
        Ok(self.push(
            Matrix::scalar(value),
            Op::ScalarWithGrad { input, grad },
            needs,
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut total = 0.0;
        for &t in terms {
            let v = self.value(t);
            if v.shape() != Shape(1, 1) {
                return Err(Error::Dimension {
                    op: "sum",
                    left: Shape(1, 1),
                    right: v.shape(),
                });
            }
            total += v.item();
        }
        let needs = terms.iter().any(|&t| self.needs(t));
        Ok(self.push(
            Matrix::scalar(total),
            Op::Sum {
                terms: terms.to_vec(),
            },
            needs,
        ))
    }

    /// Gradient of the scalar `output` with respect to every registered
    /// parameter. Parameters that do not influence `output` get zeros. A tape
    /// supports exactly one backward pass.
    pub fn backward(&mut self, output: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeState("backward already ran on this tape"));
        }
        if self.value(output).shape() != Shape(1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: Shape(1, 1),
                right: self.value(output).shape(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            // Leaves keep their accumulated gradient for collection below.
            if !self.nodes[idx].needs_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let nodes = &self.nodes;
            let mut send = |id: NodeId, contrib: Matrix| -> Result<()> {
                if !nodes[id.0].needs_grad {
                    return Ok(());
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => {
                        *slot = Some(contrib);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    if nodes[input.0].needs_grad {
                        send(*input, g.matmul_t(&nodes[weight.0].value)?)?;
                    }
                    if nodes[weight.0].needs_grad {
                        send(*weight, nodes[input.0].value.t_matmul(&g)?)?;
                    }
                    send(*bias, g.column_sums())?;
                }
                Op::MatMul { left, right } => {
                    if nodes[left.0].needs_grad {
                        send(*left, g.matmul_t(&nodes[right.0].value)?)?;
                    }
                    if nodes[right.0].needs_grad {
                        send(*right, nodes[left.0].value.t_matmul(&g)?)?;
                    }
                }
                Op::Relu { input } => {
                    let x = &nodes[input.0].value;
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    send(*input, d)?;
                }
                Op::NormalizeRows { input, norms } => {
                    let y = &node.value;
                    let mut d = g;
                    for (r, &norm) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let dr = d.row_mut(r);
                        let proj: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = (*dv - yv * proj) / norm;
                        }
                    }
                    send(*input, d)?;
                }
                Op::ScaleGrad { input, factor } => {
                    send(*input, g.scale(*factor))?;
                }
                Op::ConcatCols { left, right } => {
                    let (gl, gr) = g.split_cols(nodes[left.0].value.cols());
                    send(*left, gl)?;
                    send(*right, gr)?;
                }
                Op::Hadamard { left, right } => {
                    send(*left, g.hadamard(&nodes[right.0].value)?)?;
                    send(*right, g.hadamard(&nodes[left.0].value)?)?;
                }
                Op::SumAll { input } => {
                    let x = &nodes[input.0].value;
                    send(*input, Matrix::filled(x.rows(), x.cols(), g.item()))?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    targets,
                } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let v = d.get(r, t);
                        d.set(r, t, v - 1.0);
                    }
                    d.scale_in_place(scale);
                    send(*logits, d)?;
                }
                Op::Mse { input, target } => {
                    let x = &nodes[input.0].value;
                    let n = x.data().len().max(1) as f64;
                    let mut d = x.sub(target)?;
                    d.scale_in_place(2.0 * g.item() / n);
                    send(*input, d)?;
                }
                Op::ScalarWithGrad { input, grad } => {
                    send(*input, grad.scale(g.item()))?;
                }
                Op::Sum { terms } => {
                    for &t in terms {
                        send(t, g.clone())?;
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (name, id) in &self.params {
            let shape = self.nodes[id.0].value.shape();
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}
