//! Operation tape: forward recording + reverse-mode gradient replay.

use super::conv::{conv3d_backward, conv3d_forward, ConvDims, ConvKernel3D};
use super::pool::{
    avg_pool_backward, avg_pool_forward, max_pool_backward, max_pool_forward, PoolDims,
};
use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    Conv3d { input: NodeId, weights: NodeId, bias: NodeId, dims: ConvDims },
    AvgPool { input: NodeId, dims: PoolDims },
    MaxPool { input: NodeId, argmax: Vec<usize> },
    Concat { inputs: Vec<NodeId> },
    Relu { input: NodeId },
    Square { input: NodeId },
    /// ln(max(x, floor)); gradient 0 where clamped
    LnClamped { input: NodeId, floor: f64 },
    Dense { input: NodeId, weights: NodeId, bias: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, label: usize, softmax: Vec<f64> },
    Scale { input: NodeId, alpha: f64 },
    Sum { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Flatten { input: NodeId },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Records one forward pass; owns all intermediate values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the backward root w.r.t. this node, if it was on a
    /// differentiable path.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Register an input or parameter tensor. Gradients flow to it iff
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs = tensor.requires_grad;
        self.push(tensor, needs, Op::Leaf)
    }

    /// Convenience: leaf both halves of a kernel, returning (weights, bias).
    pub fn kernel(&mut self, k: &ConvKernel3D) -> (NodeId, NodeId) {
        (self.leaf(k.weights.clone()), self.leaf(k.bias.clone()))
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let dims = ConvDims::resolve(
            self.value(input).shape(),
            self.value(weights).shape(),
            padding,
        )?;
        if self.value(bias).numel() != dims.c_out {
            return Err(Error::Dimension(format!(
                "conv3d bias has {} entries, kernel has {} output channels",
                self.value(bias).numel(),
                dims.c_out
            )));
        }
        let out = conv3d_forward(
            self.value(input).data(),
            self.value(weights).data(),
            self.value(bias).data(),
            &dims,
        );
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        let value = Tensor::from_vec(dims.out_shape(), out)?;
        Ok(self.push(value, needs, Op::Conv3d { input, weights, bias, dims }))
    }

    pub fn avg_pool3d(
        &mut self,
        input: NodeId,
        window: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let dims = PoolDims::resolve(self.value(input).shape(), window, stride, padding)?;
        let out = avg_pool_forward(self.value(input).data(), &dims);
        let needs = self.needs(input);
        let value = Tensor::from_vec(dims.out_shape(), out)?;
        Ok(self.push(value, needs, Op::AvgPool { input, dims }))
    }

    pub fn max_pool3d(
        &mut self,
        input: NodeId,
        window: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let dims = PoolDims::resolve(self.value(input).shape(), window, stride, padding)?;
        let (out, argmax) = max_pool_forward(self.value(input).data(), &dims);
        let needs = self.needs(input);
        let value = Tensor::from_vec(dims.out_shape(), out)?;
        Ok(self.push(value, needs, Op::MaxPool { input, argmax }))
    }

    /// Concatenate along the channel (leading) axis; all trailing extents
    /// must agree.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Input("concat_channels: empty input list".into()));
        }
        let first = self.value(inputs[0]).shape().to_vec();
        let mut channels = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::Dimension(format!(
                    "concat_channels: trailing extents differ, {:?} vs {:?}",
                    first, s
                )));
            }
            channels += s[0];
        }
        let mut shape = first;
        shape[0] = channels;
        let mut data = Vec::with_capacity(shape.iter().product());
        for &id in inputs {
            data.extend_from_slice(self.value(id).data());
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, needs, Op::Concat { inputs: inputs.to_vec() }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(input).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(input);
        let value = Tensor::from_vec(shape, out).expect("relu preserves shape");
        self.push(value, needs, Op::Relu { input })
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(input).data().iter().map(|&x| x * x).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(input);
        let value = Tensor::from_vec(shape, out).expect("square preserves shape");
        self.push(value, needs, Op::Square { input })
    }

    /// Elementwise ln(max(x, floor)).
    pub fn ln_clamped(&mut self, input: NodeId, floor: f64) -> NodeId {
        let out: Vec<f64> =
            self.value(input).data().iter().map(|&x| x.max(floor).ln()).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(input);
        let value = Tensor::from_vec(shape, out).expect("ln preserves shape");
        self.push(value, needs, Op::LnClamped { input, floor })
    }

    pub fn scale(&mut self, input: NodeId, alpha: f64) -> NodeId {
        let out: Vec<f64> = self.value(input).data().iter().map(|&x| alpha * x).collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.needs(input);
        let value = Tensor::from_vec(shape, out).expect("scale preserves shape");
        self.push(value, needs, Op::Scale { input, alpha })
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.value(input).data().iter().sum();
        let needs = self.needs(input);
        self.push(Tensor::scalar(total), needs, Op::Sum { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "add: shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(value, needs, Op::Add { a, b }))
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).flattened();
        let needs = self.needs(input);
        self.push(value, needs, Op::Flatten { input })
    }

    /// Affine map W·x + b with x flat [N], W [M,N], b [M].
    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.value(input).numel();
        let ws = self.value(weights).shape().to_vec();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::Dimension(format!(
                "dense: weights {ws:?} incompatible with input length {n}"
            )));
        }
        let m = ws[0];
        if self.value(bias).numel() != m {
            return Err(Error::Dimension(format!(
                "dense: bias length {} != output length {m}",
                self.value(bias).numel()
            )));
        }
        let x = self.value(input).data();
        let w = self.value(weights).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; m];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * n..(i + 1) * n];
            let mut acc = b[i];
            for j in 0..n {
                acc += row[j] * x[j];
            }
            *o = acc;
        }
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        let value = Tensor::from_vec(vec![m], out)?;
        Ok(self.push(value, needs, Op::Dense { input, weights, bias }))
    }

    /// −log softmax(logits)[label], max-subtraction stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        let k = z.len();
        if label >= k {
            return Err(Error::Input(format!("label {label} out of range for {k} classes")));
        }
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: f64 = exps.iter().sum();
        let softmax: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() - (z[label] - zmax);
        let needs = self.needs(logits);
        let value = Tensor::scalar(loss);
        Ok(self.push(value, needs, Op::SoftmaxCrossEntropy { logits, label, softmax }))
    }

    /// Stable softmax of a logits node, computed outside the graph
    /// (inference only, no gradient).
    pub fn softmax_values(&self, logits: NodeId) -> Vec<f64> {
        let z = self.value(logits).data();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / total).collect()
    }

    /// Reverse-mode gradient accumulation from a scalar root.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Input(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn ensure<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.needs(id) {
            return None;
        }
        let numel = self.value(id).numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; numel]))
    }

    fn accumulate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv3d { input, weights, bias, dims } => {
                // weight/bias gradients always accumulate; input gradient only
                // when the input is on a differentiable path.
                let input_val = self.value(*input).storage();
                let weights_val = self.value(*weights).storage();
                let mut gw = grads[weights.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.value(*weights).numel()]);
                let mut gb = grads[bias.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.value(*bias).numel()]);
                let mut gi = if self.needs(*input) {
                    Some(
                        grads[input.0]
                            .take()
                            .unwrap_or_else(|| vec![0.0; self.value(*input).numel()]),
                    )
                } else {
                    None
                };
                conv3d_backward(
                    &input_val,
                    &weights_val,
                    g,
                    dims,
                    &mut gw,
                    &mut gb,
                    gi.as_deref_mut(),
                );
                if self.needs(*weights) {
                    grads[weights.0] = Some(gw);
                }
                if self.needs(*bias) {
                    grads[bias.0] = Some(gb);
                }
                if let Some(gi) = gi {
                    grads[input.0] = Some(gi);
                }
            }
            Op::AvgPool { input, dims } => {
                if let Some(gi) = self.ensure(grads, *input) {
                    avg_pool_backward(g, dims, gi);
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(gi) = self.ensure(grads, *input) {
                    max_pool_backward(g, argmax, gi);
                }
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &id in inputs {
                    let len = self.value(id).numel();
                    if let Some(gi) = self.ensure(grads, id) {
                        for (dst, src) in gi.iter_mut().zip(&g[offset..offset + len]) {
                            *dst += src;
                        }
                    }
                    offset += len;
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).storage();
                if let Some(gi) = self.ensure(grads, *input) {
                    for i in 0..gi.len() {
                        if x[i] > 0.0 {
                            gi[i] += g[i];
                        }
                    }
                }
            }
            Op::Square { input } => {
                let x = self.value(*input).storage();
                if let Some(gi) = self.ensure(grads, *input) {
                    for i in 0..gi.len() {
                        gi[i] += 2.0 * x[i] * g[i];
                    }
                }
            }
            Op::LnClamped { input, floor } => {
                let x = self.value(*input).storage();
                let floor = *floor;
                if let Some(gi) = self.ensure(grads, *input) {
                    for i in 0..gi.len() {
                        if x[i] > floor {
                            gi[i] += g[i] / x[i];
                        }
                    }
                }
            }
            Op::Dense { input, weights, bias } => {
                let x = self.value(*input).storage();
                let w = self.value(*weights).storage();
                let n = x.len();
                let m = g.len();
                if let Some(gw) = self.ensure(grads, *weights) {
                    for i in 0..m {
                        let row = &mut gw[i * n..(i + 1) * n];
                        let gi_ = g[i];
                        for j in 0..n {
                            row[j] += gi_ * x[j];
                        }
                    }
                }
                if let Some(gb) = self.ensure(grads, *bias) {
                    for i in 0..m {
                        gb[i] += g[i];
                    }
                }
                if let Some(gx) = self.ensure(grads, *input) {
                    for i in 0..m {
                        let row = &w[i * n..(i + 1) * n];
                        let gi_ = g[i];
                        for j in 0..n {
                            gx[j] += gi_ * row[j];
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, label, softmax } => {
                let g0 = g[0];
                let label = *label;
                if let Some(gl) = self.ensure(grads, *logits) {
                    for (i, gv) in gl.iter_mut().enumerate() {
                        let one_hot = if i == label { 1.0 } else { 0.0 };
                        *gv += g0 * (softmax[i] - one_hot);
                    }
                }
            }
            Op::Scale { input, alpha } => {
                let alpha = *alpha;
                if let Some(gi) = self.ensure(grads, *input) {
                    for (dst, src) in gi.iter_mut().zip(g) {
                        *dst += alpha * src;
                    }
                }
            }
            Op::Sum { input } => {
                let g0 = g[0];
                if let Some(gi) = self.ensure(grads, *input) {
                    for dst in gi.iter_mut() {
                        *dst += g0;
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if let Some(gi) = self.ensure(grads, id) {
                        for (dst, src) in gi.iter_mut().zip(g) {
                            *dst += src;
                        }
                    }
                }
            }
            Op::Flatten { input } => {
                if let Some(gi) = self.ensure(grads, *input) {
                    for (dst, src) in gi.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
        }
    }
}
