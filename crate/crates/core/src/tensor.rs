//! Dense N-dimensional `f64` arrays and the numerical kernels built on them.
//!
//! All reductions run in a fixed left-to-right order so results are
//! bit-reproducible across runs. There is no broadcasting and no view
//! machinery; every operation returns a freshly allocated tensor.

use crate::error::{Error, Result};

mod fmat;
pub use fmat::{read_fmat, read_fmat_bytes, write_fmat, write_fmat_bytes};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-2 tensor from nested rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("no rows given".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, c: usize, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + i) * self.shape[2] + j]
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape,
                self.numel()
            )));
        }
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sign-preserving square root: sign(z)·√|z|.
    ///
    /// Odd function with fixed points at −1, 0, 1.
    pub fn signed_sqrt(&self) -> Tensor {
        self.map(|v| {
            if v < 0.0 {
                -(-v).sqrt()
            } else {
                v.sqrt()
            }
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Left-to-right sum of all elements.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, p) = (self.shape[0], self.shape[1]);
        let (p2, n) = (other.shape[0], other.shape[1]);
        if p != p2 {
            return Err(Error::Dimension(format!(
                "matmul: inner extents differ, {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += self.data[i * p + k] * other.data[k * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose needs a rank-2 tensor, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Row-wise softmax of a rank-2 tensor, stabilized by the row max.
    ///
    /// Entries of −∞ map to exactly 0; a row with no finite entry is an
    /// error. Finite rows always sum to 1.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "softmax_rows needs a rank-2 tensor, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for &v in row {
                if v.is_nan() {
                    return Err(Error::Numeric(format!("softmax_rows: NaN in row {i}")));
                }
                if v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric(format!(
                    "softmax_rows: row {i} has no finite entry"
                )));
            }
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                // exp(-inf - max) = 0 exactly, so masked entries stay zero
                let e = (v - max).exp();
                out[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                out[i * n + j] /= denom;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Layer normalization over the slices spanned by `axes`, with affine
    /// parameters applied after normalization.
    ///
    /// Variance is the population variance (divide by count). `gamma` and
    /// `beta` are either scalars (shape `[1]`) or shaped exactly like the
    /// normalized slice, and are shared across all slices.
    pub fn layer_norm(
        &self,
        axes: &[usize],
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let rank = self.rank();
        if axes.is_empty() {
            return Err(Error::Dimension("layer_norm: empty normalized slice".into()));
        }
        let mut is_norm = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::Dimension(format!(
                    "layer_norm: axis {a} out of range for rank {rank}"
                )));
            }
            if is_norm[a] {
                return Err(Error::Dimension(format!("layer_norm: duplicate axis {a}")));
            }
            is_norm[a] = true;
        }
        let inner_shape: Vec<usize> = (0..rank).filter(|&d| is_norm[d]).map(|d| self.shape[d]).collect();
        let inner_n: usize = inner_shape.iter().product();
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if t.numel() != 1 && t.shape() != inner_shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "layer_norm: {name} shape {:?} is neither scalar nor the slice shape {inner_shape:?}",
                    t.shape()
                )));
            }
        }

        // strides of the full tensor, then enumerate (outer, inner) odometers
        let mut strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.shape[d + 1];
        }
        let outer_dims: Vec<usize> = (0..rank).filter(|&d| !is_norm[d]).collect();
        let inner_dims: Vec<usize> = (0..rank).filter(|&d| is_norm[d]).collect();
        let outer_n: usize = outer_dims.iter().map(|&d| self.shape[d]).product();

        // flat offsets of every in-slice position, relative to the slice origin
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
                if idx[carry - 1] < self.shape[inner_dims[carry - 1]] {
                    break;
                }
                idx[carry - 1] = 0;
                carry -= 1;
            }
            if carry == 0 {
                break;
            }
        }

        let mut out = vec![0.0; self.numel()];
        let mut outer_idx = vec![0usize; outer_dims.len()];
        for _ in 0..outer_n {
            let base: usize = outer_dims
                .iter()
                .zip(&outer_idx)
                .map(|(&d, &i)| i * strides[d])
                .sum();
            let mut sum = 0.0;
            for &off in &inner_offsets {
                sum += self.data[base + off];
            }
            let mean = sum / inner_n as f64;
            let mut var_acc = 0.0;
            for &off in &inner_offsets {
                let d = self.data[base + off] - mean;
                var_acc += d * d;
            }
            let inv_std = 1.0 / (var_acc / inner_n as f64 + eps).sqrt();
            for (pos, &off) in inner_offsets.iter().enumerate() {
                let g = if gamma.numel() == 1 { gamma.data[0] } else { gamma.data[pos] };
                let b = if beta.numel() == 1 { beta.data[0] } else { beta.data[pos] };
                out[base + off] = g * (self.data[base + off] - mean) * inv_std + b;
            }
            let mut carry = outer_dims.len();
            while carry > 0 {
                outer_idx[carry - 1] += 1;
                if outer_idx[carry - 1] < self.shape[outer_dims[carry - 1]] {
                    break;
                }
                outer_idx[carry - 1] = 0;
                carry -= 1;
            }
            if carry == 0 {
                break;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// 1-D cross-correlation: `self` is `[c_in × t]`, `weights` is
    /// `[c_out × c_in × k]`; zero padding, no kernel flip.
    pub fn conv1d(&self, weights: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        if self.rank() != 2 || weights.rank() != 3 {
            return Err(Error::Dimension(format!(
                "conv1d: need input [c_in × t] and weights [c_out × c_in × k], got {:?} and {:?}",
                self.shape, weights.shape
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv1d: stride must be positive".into()));
        }
        let (c_in, t) = (self.shape[0], self.shape[1]);
        let (c_out, w_cin, k) = (weights.shape[0], weights.shape[1], weights.shape[2]);
        if w_cin != c_in {
            return Err(Error::Dimension(format!(
                "conv1d: input has {c_in} channels, weights expect {w_cin}"
            )));
        }
        if t + 2 * pad < k {
            return Err(Error::Dimension(format!(
                "conv1d: kernel {k} larger than padded input {}",
                t + 2 * pad
            )));
        }
        let t_out = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; c_out * t_out];
        for co in 0..c_out {
            for ot in 0..t_out {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for j in 0..k {
                        let src = (ot * stride + j) as isize - pad as isize;
                        if src >= 0 && (src as usize) < t {
                            acc += weights.data[(co * c_in + ci) * k + j]
                                * self.data[ci * t + src as usize];
                        }
                    }
                }
                out[co * t_out + ot] = acc;
            }
        }
        Tensor::new(vec![c_out, t_out], out)
    }

    /// 2-D cross-correlation: `self` is `[c_in × h × w]`, `weights` is
    /// `[c_out × c_in × kh × kw]`; zero padding per spatial axis.
    pub fn conv2d(&self, weights: &Tensor, stride: usize, pad: (usize, usize)) -> Result<Tensor> {
        if self.rank() != 3 || weights.rank() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d: need input [c_in × h × w] and weights [c_out × c_in × kh × kw], got {:?} and {:?}",
                self.shape, weights.shape
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be positive".into()));
        }
        let (c_in, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (c_out, w_cin, kh, kw) = (
            weights.shape[0],
            weights.shape[1],
            weights.shape[2],
            weights.shape[3],
        );
        if w_cin != c_in {
            return Err(Error::Dimension(format!(
                "conv2d: input has {c_in} channels, weights expect {w_cin}"
            )));
        }
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad.0,
                w + 2 * pad.1
            )));
        }
        let h_out = (h + 2 * pad.0 - kh) / stride + 1;
        let w_out = (w + 2 * pad.1 - kw) / stride + 1;
        let mut out = vec![0.0; c_out * h_out * w_out];
        for co in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ih in 0..kh {
                            let sh = (oh * stride + ih) as isize - pad.0 as isize;
                            if sh < 0 || sh as usize >= h {
                                continue;
                            }
                            for iw in 0..kw {
                                let sw = (ow * stride + iw) as isize - pad.1 as isize;
                                if sw < 0 || sw as usize >= w {
                                    continue;
                                }
                                acc += weights.data[((co * c_in + ci) * kh + ih) * kw + iw]
                                    * self.data[(ci * h + sh as usize) * w + sw as usize];
                            }
                        }
                    }
                    out[(co * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
        Tensor::new(vec![c_out, h_out, w_out], out)
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat: no tensors given".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Dimension(format!(
                "concat: axis {axis} out of range for rank {rank}"
            )));
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = 0;
        for t in parts {
            if t.rank() != rank {
                return Err(Error::Dimension("concat: rank mismatch".into()));
            }
            for d in 0..rank {
                if d != axis && t.shape[d] != first.shape[d] {
                    return Err(Error::Dimension(format!(
                        "concat: extent mismatch on axis {d}: {:?} vs {:?}",
                        t.shape, first.shape
                    )));
                }
            }
            out_shape[axis] += t.shape[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let tail: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for t in parts {
                let span = t.shape[axis] * tail;
                data.extend_from_slice(&t.data[o * span..(o + 1) * span]);
            }
        }
        Tensor::new(out_shape, data)
    }

    /// Contiguous sub-tensor `[start, start+len)` along axis 0.
    pub fn slice_axis0(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.rank() == 0 || start + len > self.shape[0] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_axis0: [{start}, {}) out of range for extent {}",
                start + len,
                self.shape.first().copied().unwrap_or(0)
            )));
        }
        let tail: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(
            shape,
            self.data[start * tail..(start + len) * tail].to_vec(),
        )
    }

    /// Mean over one axis, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank || rank < 2 {
            return Err(Error::Dimension(format!(
                "mean_axis: axis {axis} invalid for shape {:?}",
                self.shape
            )));
        }
        let n = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let tail: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * tail];
        for o in 0..outer {
            for i in 0..n {
                for t in 0..tail {
                    out[o * tail + t] += self.data[(o * n + i) * tail + t];
                }
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor::new(shape, out)
    }
}
