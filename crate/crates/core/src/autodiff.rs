//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Graph`] is a flat tape of primitive applications. Every node's
//! operands precede it, the output is a single scalar, and both evaluation
//! and gradient accumulation walk the tape in a fixed order, so repeated
//! runs on identical inputs are bitwise identical.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: (usize, usize),
    },
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axes: Vec<usize>,
        eps: f64,
    },
    SignedSqrt(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatAxis0(Vec<NodeId>),
    SliceAxis0 {
        x: NodeId,
        start: usize,
        len: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Conv1d { .. } => "conv1d",
            Op::Conv2d { .. } => "conv2d",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SignedSqrt(..) => "signed_sqrt",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatAxis0(..) => "concat_axis0",
            Op::SliceAxis0 { .. } => "slice_axis0",
        }
    }
}

/// Computation graph with named leaves and one scalar output.
#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    pub fn leaf(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Leaf(name.into()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        self.push(Op::Conv1d { x, w, stride, pad })
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: (usize, usize)) -> NodeId {
        self.push(Op::Conv2d { x, w, stride, pad })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        axes: &[usize],
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> NodeId {
        self.push(Op::LayerNorm {
            x,
            gamma,
            beta,
            axes: axes.to_vec(),
            eps,
        })
    }

    pub fn signed_sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SignedSqrt(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn concat_axis0(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::ConcatAxis0(parts.to_vec()))
    }

    pub fn slice_axis0(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceAxis0 { x, start, len })
    }

    /// Marks `node` as the graph output. Must be scalar at evaluation time.
    pub fn set_output(&mut self, node: NodeId) {
        self.output = Some(node);
    }

    pub fn leaf_names(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Leaf(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn forward(&self, leaves: &HashMap<String, Tensor>) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = match op {
                Op::Leaf(name) => leaves
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("no value bound to leaf '{name}'")))?,
                Op::Constant(t) => t.clone(),
                Op::Add(a, b) => values[a.0].add(&values[b.0])?,
                Op::Mul(a, b) => values[a.0].mul(&values[b.0])?,
                Op::Scale(a, f) => values[a.0].scale(*f),
                Op::Matmul(a, b) => values[a.0].matmul(&values[b.0])?,
                Op::Transpose(a) => values[a.0].transpose()?,
                Op::Conv1d { x, w, stride, pad } => values[x.0].conv1d(&values[w.0], *stride, *pad)?,
                Op::Conv2d { x, w, stride, pad } => values[x.0].conv2d(&values[w.0], *stride, *pad)?,
                Op::SoftmaxRows(a) => values[a.0].softmax_rows()?,
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    axes,
                    eps,
                } => values[x.0].layer_norm(axes, &values[gamma.0], &values[beta.0], *eps)?,
                Op::SignedSqrt(a) => values[a.0].signed_sqrt(),
                Op::Sum(a) => Tensor::scalar(values[a.0].sum()),
                Op::Mean(a) => Tensor::scalar(values[a.0].mean()),
                Op::ConcatAxis0(parts) => {
                    let refs: Vec<&Tensor> = parts.iter().map(|p| &values[p.0]).collect();
                    Tensor::concat(&refs, 0)?
                }
                Op::SliceAxis0 { x, start, len } => values[x.0].slice_axis0(*start, *len)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    fn output_node(&self) -> Result<NodeId> {
        self.output
            .ok_or_else(|| Error::Contract("graph has no output node".into()))
    }

    /// Evaluates the scalar output at the given leaf bindings.
    pub fn evaluate(&self, leaves: &HashMap<String, Tensor>) -> Result<f64> {
        let out = self.output_node()?;
        let values = self.forward(leaves)?;
        let t = &values[out.0];
        if t.numel() != 1 {
            return Err(Error::Contract(format!(
                "output must be scalar, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    /// Reverse-accumulation gradient of the scalar output with respect to
    /// every leaf. Fails if the forward value is not a finite scalar or if
    /// NaN appears during the backward sweep.
    pub fn gradient(&self, leaves: &HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>> {
        let out = self.output_node()?;
        let values = self.forward(leaves)?;
        let out_val = &values[out.0];
        if out_val.numel() != 1 {
            return Err(Error::Contract(format!(
                "output must be scalar, got shape {:?}",
                out_val.shape()
            )));
        }
        if !out_val.data()[0].is_finite() {
            return Err(Error::Numeric(format!(
                "output is not finite: {}",
                out_val.data()[0]
            )));
        }

        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        adjoints[out.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.ops.len()).rev() {
            let Some(dy) = adjoints[i].clone() else {
                continue;
            };
            let produced = |g: &Tensor| -> Result<()> {
                if g.data().iter().any(|v| v.is_nan()) {
                    Err(Error::Numeric(format!(
                        "NaN in backward of node {i} ({})",
                        self.ops[i].name()
                    )))
                } else {
                    Ok(())
                }
            };
            match &self.ops[i] {
                Op::Leaf(_) | Op::Constant(_) => {}
                Op::Add(a, b) => {
                    produced(&dy)?;
                    accumulate(&mut adjoints, *a, dy.clone())?;
                    accumulate(&mut adjoints, *b, dy)?;
                }
                Op::Mul(a, b) => {
                    let da = dy.mul(&values[b.0])?;
                    let db = dy.mul(&values[a.0])?;
                    produced(&da)?;
                    produced(&db)?;
                    accumulate(&mut adjoints, *a, da)?;
                    accumulate(&mut adjoints, *b, db)?;
                }
                Op::Scale(a, f) => {
                    let g = dy.scale(*f);
                    produced(&g)?;
                    accumulate(&mut adjoints, *a, g)?;
                }
                Op::Matmul(a, b) => {
                    let da = dy.matmul(&values[b.0].transpose()?)?;
                    let db = values[a.0].transpose()?.matmul(&dy)?;
                    produced(&da)?;
                    produced(&db)?;
                    accumulate(&mut adjoints, *a, da)?;
                    accumulate(&mut adjoints, *b, db)?;
                }
                Op::Transpose(a) => {
                    let g = dy.transpose()?;
                    produced(&g)?;
                    accumulate(&mut adjoints, *a, g)?;
                }
                Op::Conv1d { x, w, stride, pad } => {
                    let (dx, dw) = conv1d_backward(&values[x.0], &values[w.0], &dy, *stride, *pad)?;
                    produced(&dx)?;
                    produced(&dw)?;
                    accumulate(&mut adjoints, *x, dx)?;
                    accumulate(&mut adjoints, *w, dw)?;
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (dx, dw) = conv2d_backward(&values[x.0], &values[w.0], &dy, *stride, *pad)?;
                    produced(&dx)?;
                    produced(&dw)?;
                    accumulate(&mut adjoints, *x, dx)?;
                    accumulate(&mut adjoints, *w, dw)?;
                }
                Op::SoftmaxRows(a) => {
                    let dx = softmax_rows_backward(&values[i], &dy)?;
                    produced(&dx)?;
                    accumulate(&mut adjoints, *a, dx)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    axes,
                    eps,
                } => {
                    let (dx, dgamma, dbeta) = layer_norm_backward(
                        &values[x.0],
                        &values[gamma.0],
                        &values[beta.0],
                        axes,
                        *eps,
                        &dy,
                    )?;
                    produced(&dx)?;
                    produced(&dgamma)?;
                    produced(&dbeta)?;
                    accumulate(&mut adjoints, *x, dx)?;
                    accumulate(&mut adjoints, *gamma, dgamma)?;
                    accumulate(&mut adjoints, *beta, dbeta)?;
                }
                Op::SignedSqrt(a) => {
                    // d/dz sign(z)·√|z| = 1/(2·√|z|), z ≠ 0
                    let dx = values[a.0]
                        .map(|z| 1.0 / (2.0 * z.abs().sqrt()))
                        .mul(&dy)?;
                    produced(&dx)?;
                    accumulate(&mut adjoints, *a, dx)?;
                }
                Op::Sum(a) => {
                    let g = Tensor::filled(values[a.0].shape().to_vec(), dy.data()[0]);
                    accumulate(&mut adjoints, *a, g)?;
                }
                Op::Mean(a) => {
                    let n = values[a.0].numel() as f64;
                    let g = Tensor::filled(values[a.0].shape().to_vec(), dy.data()[0] / n);
                    accumulate(&mut adjoints, *a, g)?;
                }
                Op::ConcatAxis0(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let len = values[p.0].shape()[0];
                        accumulate(&mut adjoints, *p, dy.slice_axis0(start, len)?)?;
                        start += len;
                    }
                }
                Op::SliceAxis0 { x, start, len } => {
                    let mut g = Tensor::zeros(values[x.0].shape().to_vec());
                    let tail: usize = values[x.0].shape()[1..].iter().product();
                    g.data_mut()[start * tail..(start + len) * tail]
                        .copy_from_slice(dy.data());
                    accumulate(&mut adjoints, *x, g)?;
                }
            }
        }

        let mut grads = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Leaf(name) = op {
                let g = match adjoints[i].take() {
                    Some(g) => g,
                    None => Tensor::zeros(values[i].shape().to_vec()),
                };
                if g.data().iter().any(|v| v.is_nan()) {
                    return Err(Error::Numeric(format!("NaN gradient for leaf '{name}'")));
                }
                grads.insert(name.clone(), g);
            }
        }
        Ok(grads)
    }

    /// Central finite differences of the scalar output, step `h`, for every
    /// component of every leaf. Independent of the reverse sweep.
    pub fn finite_diff(
        &self,
        leaves: &HashMap<String, Tensor>,
        h: f64,
    ) -> Result<HashMap<String, Tensor>> {
        let mut grads = HashMap::new();
        let mut names: Vec<&String> = leaves.keys().collect();
        names.sort();
        for name in names {
            let base = &leaves[name];
            let mut g = Tensor::zeros(base.shape().to_vec());
            for i in 0..base.numel() {
                let mut plus = leaves.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += h;
                let fp = self.evaluate(&plus)?;
                let mut minus = leaves.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= h;
                let fm = self.evaluate(&minus)?;
                g.data_mut()[i] = (fp - fm) / (2.0 * h);
            }
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }
}

fn accumulate(adjoints: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut adjoints[id.0] {
        Some(existing) => {
            *existing = existing.add(&g)?;
        }
        slot => *slot = Some(g),
    }
    Ok(())
}

fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    let (m, n) = (y.shape()[0], y.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let mut dot = 0.0;
        for j in 0..n {
            dot += dy.data()[i * n + j] * y.data()[i * n + j];
        }
        for j in 0..n {
            out[i * n + j] = y.data()[i * n + j] * (dy.data()[i * n + j] - dot);
        }
    }
    Tensor::new(vec![m, n], out)
}

fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let t_out = dy.shape()[1];
    let mut dx = vec![0.0; c_in * t];
    let mut dw = vec![0.0; c_out * c_in * k];
    for co in 0..c_out {
        for ot in 0..t_out {
            let g = dy.data()[co * t_out + ot];
            for ci in 0..c_in {
                for j in 0..k {
                    let src = (ot * stride + j) as isize - pad as isize;
                    if src >= 0 && (src as usize) < t {
                        let src = src as usize;
                        dx[ci * t + src] += g * w.data()[(co * c_in + ci) * k + j];
                        dw[(co * c_in + ci) * k + j] += g * x.data()[ci * t + src];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c_in, t], dx)?,
        Tensor::new(vec![c_out, c_in, k], dw)?,
    ))
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: (usize, usize),
) -> Result<(Tensor, Tensor)> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h_out, w_out) = (dy.shape()[1], dy.shape()[2]);
    let mut dx = vec![0.0; c_in * h * wd];
    let mut dw = vec![0.0; c_out * c_in * kh * kw];
    for co in 0..c_out {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let g = dy.data()[(co * h_out + oh) * w_out + ow];
                for ci in 0..c_in {
                    for ih in 0..kh {
                        let sh = (oh * stride + ih) as isize - pad.0 as isize;
                        if sh < 0 || sh as usize >= h {
                            continue;
                        }
                        for iw in 0..kw {
                            let sw = (ow * stride + iw) as isize - pad.1 as isize;
                            if sw < 0 || sw as usize >= wd {
                                continue;
                            }
                            let xi = (ci * h + sh as usize) * wd + sw as usize;
                            let wi = ((co * c_in + ci) * kh + ih) * kw + iw;
                            dx[xi] += g * w.data()[wi];
                            dw[wi] += g * x.data()[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c_in, h, wd], dx)?,
        Tensor::new(vec![c_out, c_in, kh, kw], dw)?,
    ))
}

fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    axes: &[usize],
    eps: f64,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let rank = x.rank();
    let mut is_norm = vec![false; rank];
    for &a in axes {
        is_norm[a] = true;
    }
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * x.shape()[d + 1];
    }
    let outer_dims: Vec<usize> = (0..rank).filter(|&d| !is_norm[d]).collect();
    let inner_dims: Vec<usize> = (0..rank).filter(|&d| is_norm[d]).collect();
    let outer_n: usize = outer_dims.iter().map(|&d| x.shape()[d]).product();
    let inner_n: usize = inner_dims.iter().map(|&d| x.shape()[d]).product();

    let mut inner_offsets = Vec::with_capacity(inner_n);
    let mut idx = vec![0usize; inner_dims.len()];
    loop {
        let off: usize = inner_dims
            .iter()
            .zip(&idx)
            .map(|(&d, &i)| i * strides[d])
            .sum();
        inner_offsets.push(off);
        let mut carry = inner_dims.len();
        while carry > 0 {
            idx[carry - 1] += 1;
            if idx[carry - 1] < x.shape()[inner_dims[carry - 1]] {
                break;
            }
            idx[carry - 1] = 0;
            carry -= 1;
        }
        if carry == 0 {
            break;
        }
    }

    let scalar_affine = gamma.numel() == 1;
    let mut dx = vec![0.0; x.numel()];
    let mut dgamma = vec![0.0; gamma.numel()];
    let mut dbeta = vec![0.0; beta.numel()];

    let mut outer_idx = vec![0usize; outer_dims.len()];
    for _ in 0..outer_n {
        let base: usize = outer_dims
            .iter()
            .zip(&outer_idx)
            .map(|(&d, &i)| i * strides[d])
            .sum();
        let mut sum = 0.0;
        for &off in &inner_offsets {
            sum += x.data()[base + off];
        }
        let mean = sum / inner_n as f64;
        let mut var_acc = 0.0;
        for &off in &inner_offsets {
            let d = x.data()[base + off] - mean;
            var_acc += d * d;
        }
        let inv_std = 1.0 / (var_acc / inner_n as f64 + eps).sqrt();

        // g = gamma ⊙ dy over the slice; dx = inv_std·(g − mean(g) − x̂·mean(g·x̂))
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for (pos, &off) in inner_offsets.iter().enumerate() {
            let gm = if scalar_affine { gamma.data()[0] } else { gamma.data()[pos] };
            let xhat = (x.data()[base + off] - mean) * inv_std;
            let g = gm * dy.data()[base + off];
            g_mean += g;
            gx_mean += g * xhat;
            let gpos = if scalar_affine { 0 } else { pos };
            dgamma[gpos] += dy.data()[base + off] * xhat;
            dbeta[gpos] += dy.data()[base + off];
        }
        g_mean /= inner_n as f64;
        gx_mean /= inner_n as f64;
        for (pos, &off) in inner_offsets.iter().enumerate() {
            let gm = if scalar_affine { gamma.data()[0] } else { gamma.data()[pos] };
            let xhat = (x.data()[base + off] - mean) * inv_std;
            let g = gm * dy.data()[base + off];
            dx[base + off] = inv_std * (g - g_mean - xhat * gx_mean);
        }

        let mut carry = outer_dims.len();
        while carry > 0 {
            outer_idx[carry - 1] += 1;
            if outer_idx[carry - 1] < x.shape()[outer_dims[carry - 1]] {
                break;
            }
            outer_idx[carry - 1] = 0;
            carry -= 1;
        }
        if carry == 0 {
            break;
        }
    }

    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(gamma.shape().to_vec(), dgamma)?,
        Tensor::new(beta.shape().to_vec(), dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor)]) -> HashMap<String, Tensor> {
        pairs
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let sq = g.mul(x, x);
        let out = g.sum(sq);
        g.set_output(out);
        let leaves = bind(&[("x", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap())]);
        let grads = g.gradient(&leaves).unwrap();
        assert_eq!(grads["x"].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn softmax_row_sums_have_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let s = g.softmax_rows(x);
        let out = g.sum(s);
        g.set_output(out);
        let leaves = bind(&[(
            "x",
            Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]]).unwrap(),
        )]);
        let grads = g.gradient(&leaves).unwrap();
        for &v in grads["x"].data() {
            assert!(v.abs() < 1e-12, "expected ~0, got {v}");
        }
    }

    #[test]
    fn attention_graph_matches_finite_differences() {
        let mut g = Graph::new();
        let q = g.leaf("q");
        let k = g.leaf("k");
        let v = g.leaf("v");
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt);
        let a = g.softmax_rows(scores);
        let av = g.matmul(a, v);
        let out = g.sum(av);
        g.set_output(out);

        let leaves = bind(&[
            ("q", Tensor::from_rows(&[vec![0.4, 1.1], vec![-0.3, 0.7]]).unwrap()),
            ("k", Tensor::from_rows(&[vec![0.9, -0.2], vec![0.5, 0.8]]).unwrap()),
            ("v", Tensor::from_rows(&[vec![1.0, 0.3], vec![-0.6, 1.4]]).unwrap()),
        ]);
        let ad = g.gradient(&leaves).unwrap();
        let fd = g.finite_diff(&leaves, 1e-5).unwrap();
        for name in ["q", "k", "v"] {
            for (a, b) in ad[name].data().iter().zip(fd[name].data()) {
                if a.abs() > 1e-8 {
                    let rel = (a - b).abs() / a.abs().max(b.abs());
                    assert!(rel < 1e-4, "{name}: ad={a} fd={b} rel={rel}");
                }
            }
        }
    }

    #[test]
    fn signed_sqrt_negative_branch_matches_finite_differences() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let s = g.signed_sqrt(x);
        let c = g.constant(Tensor::new(vec![4], vec![1.0, -0.5, 2.0, 0.25]).unwrap());
        let p = g.mul(s, c);
        let out = g.sum(p);
        g.set_output(out);
        let leaves = bind(&[("x", Tensor::new(vec![4], vec![-1.7, 0.9, -0.4, 2.2]).unwrap())]);
        let ad = g.gradient(&leaves).unwrap();
        let fd = g.finite_diff(&leaves, 1e-5).unwrap();
        for (a, b) in ad["x"].data().iter().zip(fd["x"].data()) {
            let rel = (a - b).abs() / a.abs().max(b.abs());
            assert!(rel < 1e-4, "ad={a} fd={b}");
        }
    }

    #[test]
    fn gradient_linearity_of_summed_graphs() {
        // one graph computing f+g shares leaves with standalone f and g
        let build = |with_both: bool| {
            let mut g = Graph::new();
            let x = g.leaf("x");
            let sq = g.mul(x, x);
            let f = g.sum(sq);
            if with_both {
                let s = g.signed_sqrt(x);
                let h = g.sum(s);
                let both = g.add(f, h);
                g.set_output(both);
            } else {
                g.set_output(f);
            }
            g
        };
        let leaves = bind(&[("x", Tensor::new(vec![3], vec![1.3, 2.5, 0.7]).unwrap())]);
        let combined = build(true).gradient(&leaves).unwrap();

        let mut g2 = Graph::new();
        let x2 = g2.leaf("x");
        let s2 = g2.signed_sqrt(x2);
        let h2 = g2.sum(s2);
        g2.set_output(h2);
        let part_f = build(false).gradient(&leaves).unwrap();
        let part_h = g2.gradient(&leaves).unwrap();

        for i in 0..3 {
            let lhs = combined["x"].data()[i];
            let rhs = part_f["x"].data()[i] + part_h["x"].data()[i];
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_is_bitwise_reproducible() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let s = g.softmax_rows(x);
        let sq = g.mul(s, s);
        let out = g.sum(sq);
        g.set_output(out);
        let leaves = bind(&[(
            "x",
            Tensor::from_rows(&[vec![0.1, 0.9, -0.4], vec![2.0, -1.0, 0.3]]).unwrap(),
        )]);
        let a = g.gradient(&leaves).unwrap();
        let b = g.gradient(&leaves).unwrap();
        assert_eq!(a["x"].data(), b["x"].data());
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        g.set_output(x);
        let leaves = bind(&[("x", Tensor::zeros(vec![2, 2]))]);
        assert!(matches!(
            g.gradient(&leaves),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nan_during_backward_names_the_node() {
        // signed_sqrt at 0 has an infinite derivative; scaling by 0 turns the
        // pulled-back adjoint into 0·inf = NaN
        let mut g = Graph::new();
        let x = g.leaf("x");
        let s = g.signed_sqrt(x);
        let z = g.scale(s, 0.0);
        let out = g.sum(z);
        g.set_output(out);
        let leaves = bind(&[("x", Tensor::new(vec![1], vec![0.0]).unwrap())]);
        match g.gradient(&leaves) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("signed_sqrt") || msg.contains("leaf")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn conv_graph_matches_finite_differences() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let w = g.leaf("w");
        let y = g.conv1d(x, w, 1, 1);
        let sq = g.mul(y, y);
        let out = g.sum(sq);
        g.set_output(out);
        let leaves = bind(&[
            ("x", Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 0.3]]).unwrap()),
            ("w", Tensor::new(vec![2, 1, 3], vec![0.2, -0.4, 1.0, 0.7, 0.1, -0.3]).unwrap()),
        ]);
        let ad = g.gradient(&leaves).unwrap();
        let fd = g.finite_diff(&leaves, 1e-5).unwrap();
        for name in ["x", "w"] {
            for (a, b) in ad[name].data().iter().zip(fd[name].data()) {
                if a.abs() > 1e-8 {
                    let rel = (a - b).abs() / a.abs().max(b.abs());
                    assert!(rel < 1e-4, "{name}: ad={a} fd={b}");
                }
            }
        }
    }
}
