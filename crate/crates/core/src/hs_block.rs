//! Hierarchical-Split block: split the feature map into `s` groups, stack
//! grouped k×k filters with half-forwarding between consecutive groups, and
//! account for the parameters analytically.
//!
//! Dataflow per forward pass: group 1 passes through unchanged; group i > 1
//! is filtered together with the trailing half of group i−1's output; the
//! leading halves of groups 1..s−1 plus the whole last group concatenate to
//! the output. With exact halving at every step this conserves the channel
//! count at s·C₀.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Configuration and weights of one Hierarchical-Split block.
///
/// `w` is the stage's nominal channel count, `t` the channel expansion
/// factor, `s` the number of splits, `k` the square kernel size. Group 1 is
/// an identity, so the block carries filters F₂..F_s; filter F_i maps
/// C_{i−1} channels to C_{i−1} channels.
#[derive(Debug, Clone)]
pub struct HSBlockConfig {
    w: usize,
    t: f64,
    s: usize,
    k: usize,
    widths: Vec<usize>,
    /// weights[i] is F_{i+2}, shaped [C_{i+1} × C_{i+1} × k × k]
    weights: Vec<Tensor>,
}

/// Base width C₀ = ⌊w·t/s⌋ and the derived schedule
/// C_i = C₀ + ⌊C_{i−1}/2⌋ for i ≥ 1.
pub fn channel_widths(w: usize, t: f64, s: usize) -> Result<Vec<usize>> {
    if s < 2 {
        return Err(Error::Config(format!("need s ≥ 2 splits, got {s}")));
    }
    if t.is_nan() || t <= 0.0 || w == 0 {
        return Err(Error::Config(format!("need w ≥ 1 and t > 0, got w={w}, t={t}")));
    }
    let raw = w as f64 * t / s as f64;
    // snap to the nearest integer when the product is one rounding error shy
    let c0 = if (raw - raw.round()).abs() < 1e-9 {
        raw.round() as usize
    } else {
        raw.floor() as usize
    };
    if c0 < 2 {
        return Err(Error::Config(format!(
            "base width C0 = floor({w}·{t}/{s}) = {c0} is too small to split in half (need ≥ 2)"
        )));
    }
    let mut widths = Vec::with_capacity(s);
    widths.push(c0);
    for i in 1..s {
        widths.push(c0 + widths[i - 1] / 2);
    }
    Ok(widths)
}

/// Summation form of the block's parameter count:
/// k²·(Σ_{i=0}^{s−2} C_i² + C₀²), evaluated in integer arithmetic.
pub fn hs_param_sum(w: usize, t: f64, s: usize, k: usize) -> Result<u64> {
    if k < 1 {
        return Err(Error::Config(format!("kernel size must be ≥ 1, got {k}")));
    }
    let widths = channel_widths(w, t, s)?;
    let mut acc: u64 = 0;
    for &c in &widths[..s - 1] {
        acc += (c * c) as u64;
    }
    acc += (widths[0] * widths[0]) as u64;
    Ok((k * k) as u64 * acc)
}

/// Closed form of the same count:
/// k²·C₀²·(4s − 29/3 + 16·2^{−s} − (16/3)·2^{−2s}).
///
/// The printed closed form drops the k² factor that the summation form
/// carries; both evaluate the same bracketed quantity, so k² is restored
/// here. Agrees exactly with [`hs_param_sum`] whenever every halving in the
/// width schedule is exact.
pub fn hs_param_closed(w: usize, t: f64, s: usize, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Config(format!("kernel size must be ≥ 1, got {k}")));
    }
    let widths = channel_widths(w, t, s)?;
    let c0 = widths[0] as f64;
    let s_f = s as f64;
    let bracket = 4.0 * s_f - 29.0 / 3.0 + 16.0 * 2f64.powi(-(s as i32))
        - (16.0 / 3.0) * 2f64.powi(-2 * s as i32);
    Ok((k * k) as f64 * c0 * c0 * bracket)
}

impl HSBlockConfig {
    /// Validates the hyperparameters and derives the width schedule; no
    /// weights are attached yet.
    pub fn new(w: usize, t: f64, s: usize, k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be odd and positive, got {k}"
            )));
        }
        let widths = channel_widths(w, t, s)?;
        Ok(Self {
            w,
            t,
            s,
            k,
            widths,
            weights: Vec::new(),
        })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The derived channel schedule [C₀ … C_{s−1}].
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Channel count entering and leaving the block: s·C₀.
    pub fn io_channels(&self) -> usize {
        self.s * self.widths[0]
    }

    fn filter_shape(&self, group: usize) -> Vec<usize> {
        // group ∈ 2..=s, filter width C_{group−1}
        let c = self.widths[group - 1];
        vec![c, c, self.k, self.k]
    }

    /// Attaches explicit filters F₂..F_s, validating shapes.
    pub fn with_weights(mut self, weights: Vec<Tensor>) -> Result<Self> {
        if weights.len() != self.s - 1 {
            return Err(Error::Config(format!(
                "expected {} filter groups, got {}",
                self.s - 1,
                weights.len()
            )));
        }
        for (i, wt) in weights.iter().enumerate() {
            let want = self.filter_shape(i + 2);
            if wt.shape() != want.as_slice() {
                return Err(Error::Config(format!(
                    "filter F{} has shape {:?}, expected {:?}",
                    i + 2,
                    wt.shape(),
                    want
                )));
            }
        }
        self.weights = weights;
        Ok(self)
    }

    /// Attaches filters drawn uniformly from [−b, b], b = 1/√fan_in.
    pub fn with_seeded_weights(self, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut weights = Vec::with_capacity(self.s - 1);
        for g in 2..=self.s {
            let shape = self.filter_shape(g);
            let fan_in = shape[1] * shape[2] * shape[3];
            let b = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-b..=b)).collect();
            weights.push(Tensor::new(shape, data)?);
        }
        self.with_weights(weights)
    }

    /// All-constant filters; handy for dataflow tests.
    pub fn with_constant_weights(self, value: f64) -> Result<Self> {
        let weights = (2..=self.s)
            .map(|g| Tensor::filled(self.filter_shape(g), value))
            .collect();
        self.with_weights(weights)
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Replaces filter F_{idx+2} in place, keeping its contract shape.
    pub fn set_weight(&mut self, idx: usize, value: Tensor) -> Result<()> {
        if idx >= self.weights.len() {
            return Err(Error::Data(format!("no filter group at index {idx}")));
        }
        let want = self.filter_shape(idx + 2);
        if value.shape() != want.as_slice() {
            return Err(Error::Data(format!(
                "filter F{}: shape {:?}, expected {want:?}",
                idx + 2,
                value.shape()
            )));
        }
        self.weights[idx] = value;
        Ok(())
    }

    /// Element count of the filters actually constructed: k²·Σ_{i=1}^{s−1} C_i².
    ///
    /// This differs from [`hs_param_sum`], which reproduces the printed
    /// analytic formula (indexing C₀..C_{s−2} plus an extra C₀² term for a
    /// group-1 filter the dataflow does not build). Both are reported.
    pub fn constructed_param_count(&self) -> u64 {
        self.widths[1..]
            .iter()
            .map(|&c| ((c * c) * (self.k * self.k)) as u64)
            .sum()
    }

    /// Forward pass over an `[s·C₀ × H × W]` feature map, stride 1 and zero
    /// padding k//2 so spatial extents are preserved.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.weights.len() != self.s - 1 {
            return Err(Error::Config("block has no weights attached".into()));
        }
        if x.rank() != 3 {
            return Err(Error::Dimension(format!(
                "hs_forward expects [channels × h × w], got {:?}",
                x.shape()
            )));
        }
        let c0 = self.widths[0];
        if x.shape()[0] != self.io_channels() {
            return Err(Error::Dimension(format!(
                "hs_forward: input has {} channels, config needs s·C0 = {}",
                x.shape()[0],
                self.io_channels()
            )));
        }
        let pad = self.k / 2;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.s);
        // y_1 = x_1 (identity group)
        let mut y_prev = x.slice_axis0(0, c0)?;
        for i in 2..=self.s {
            let keep = y_prev.shape()[0].div_ceil(2);
            let carry = y_prev.shape()[0] - keep;
            outputs.push(y_prev.slice_axis0(0, keep)?);
            let carried = y_prev.slice_axis0(keep, carry)?;
            let x_i = x.slice_axis0((i - 1) * c0, c0)?;
            let fed = Tensor::concat(&[&x_i, &carried], 0)?;
            y_prev = fed.conv2d(&self.weights[i - 2], 1, (pad, pad))?;
        }
        outputs.push(y_prev);
        let refs: Vec<&Tensor> = outputs.iter().collect();
        Tensor::concat(&refs, 0)
    }

    /// Channel ranges of each group's slice in the forward output, in order
    /// y_{1,1}, …, y_{s−1,1}, y_s.
    pub fn output_group_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::with_capacity(self.s);
        let mut start = 0;
        let mut prev_width = self.widths[0];
        for i in 2..=self.s {
            let keep = prev_width.div_ceil(2);
            ranges.push((start, keep));
            start += keep;
            prev_width = self.widths[i - 1];
        }
        ranges.push((start, prev_width));
        ranges
    }

    /// Builds the block's dataflow on an autodiff graph. Weights enter as
    /// constants; `x` is the caller's input node.
    pub fn graph_forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        if self.weights.len() != self.s - 1 {
            return Err(Error::Config("block has no weights attached".into()));
        }
        let c0 = self.widths[0];
        let pad = self.k / 2;
        let mut outputs: Vec<NodeId> = Vec::with_capacity(self.s);
        let mut y_prev = g.slice_axis0(x, 0, c0);
        let mut prev_width = c0;
        for i in 2..=self.s {
            let keep = prev_width.div_ceil(2);
            let carry = prev_width - keep;
            outputs.push(g.slice_axis0(y_prev, 0, keep));
            let carried = g.slice_axis0(y_prev, keep, carry);
            let x_i = g.slice_axis0(x, (i - 1) * c0, c0);
            let fed = g.concat_axis0(&[x_i, carried]);
            let w = g.constant(self.weights[i - 2].clone());
            y_prev = g.conv2d(fed, w, 1, (pad, pad));
            prev_width = self.widths[i - 1];
        }
        outputs.push(y_prev);
        Ok(g.concat_axis0(&outputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn widths_paper_setting() {
        // w=64, t=1.5, s=8 gives C0 = 12
        let w = channel_widths(64, 1.5, 8).unwrap();
        assert_eq!(w, vec![12, 18, 21, 22, 23, 23, 23, 23]);
    }

    #[test]
    fn widths_exact_recurrence() {
        let w = channel_widths(16, 4.0, 4).unwrap();
        assert_eq!(w, vec![16, 24, 28, 30]);
    }

    #[test]
    fn widths_one_step() {
        for c0 in [4usize, 8, 12] {
            let w = channel_widths(c0 * 2, 1.0, 2).unwrap();
            assert_eq!(w, vec![c0, c0 + c0 / 2]);
        }
    }

    #[test]
    fn widths_too_small_is_config_error() {
        assert!(matches!(
            channel_widths(4, 1.0, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_split_is_rejected() {
        assert!(matches!(channel_widths(16, 1.0, 1), Err(Error::Config(_))));
        assert!(HSBlockConfig::new(16, 1.0, 1, 3).is_err());
    }

    #[test]
    fn param_sum_hand_value() {
        // C0=16, s=4, k=3: 9·(16² + 24² + 28² + 16²) = 16848
        assert_eq!(hs_param_sum(16, 4.0, 4, 3).unwrap(), 16848);
    }

    #[test]
    fn param_sum_two_terms() {
        assert_eq!(hs_param_sum(16, 1.0, 2, 1).unwrap(), 128);
    }

    #[test]
    fn param_sum_rejects_zero_kernel() {
        assert!(hs_param_sum(16, 4.0, 4, 0).is_err());
    }

    #[test]
    fn param_closed_hand_values() {
        let v = hs_param_closed(16, 4.0, 4, 3).unwrap();
        assert!((v - 16848.0).abs() < 1e-6, "got {v}");
        let v2 = hs_param_closed(16, 1.0, 2, 1).unwrap();
        assert!((v2 - 128.0).abs() < 1e-9, "got {v2}");
    }

    #[test]
    fn sum_and_closed_agree_on_exact_halving() {
        for s in 2..=10usize {
            // exact halving throughout needs C0 divisible by 2^{s-1}
            let c0 = 1usize << (s - 1);
            let w = c0 * s;
            let sum = hs_param_sum(w, 1.0, s, 3).unwrap();
            let closed = hs_param_closed(w, 1.0, s, 3).unwrap();
            assert_eq!(sum, closed.round() as u64, "s={s}");
        }
    }

    #[test]
    fn forward_zero_weights_passes_first_half_of_group1() {
        let cfg = HSBlockConfig::new(8, 1.0, 2, 3)
            .unwrap()
            .with_constant_weights(0.0)
            .unwrap();
        let x = Tensor::filled(vec![8, 4, 4], 2.5);
        let y = cfg.forward(&x).unwrap();
        assert_eq!(y.shape(), &[8, 4, 4]);
        // y_{1,1} = first ceil(4/2)=2 channels of x_1, everything else zero
        for c in 0..8 {
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if c < 2 { 2.5 } else { 0.0 };
                    assert_eq!(y.at3(c, i, j), expect);
                }
            }
        }
    }

    #[test]
    fn forward_identity_filter_permutes_with_copy() {
        // s=2, C0=4, k=1; F_2 = identity over its 6 input channels
        let cfg = HSBlockConfig::new(8, 1.0, 2, 1).unwrap();
        let mut ident = Tensor::zeros(vec![6, 6, 1, 1]);
        for c in 0..6 {
            ident.data_mut()[c * 6 + c] = 1.0;
        }
        let cfg = cfg.with_weights(vec![ident]).unwrap();
        let mut x = Tensor::zeros(vec![8, 1, 1]);
        for c in 0..8 {
            x.data_mut()[c] = (c + 1) as f64;
        }
        let y = cfg.forward(&x).unwrap();
        // output = concat(x1[0:2], x2, x1[2:4])
        let expect = [1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn forward_conserves_channels_at_paper_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = HSBlockConfig::new(16, 4.0, 4, 3)
            .unwrap()
            .with_seeded_weights(&mut rng)
            .unwrap();
        let n: usize = 64 * 8 * 8;
        let data: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![64, 8, 8], data).unwrap();
        let y = cfg.forward(&x).unwrap();
        assert_eq!(y.shape(), &[64, 8, 8]);
        assert!(y.is_finite());
    }

    #[test]
    fn forward_channel_mismatch_is_dimension_error() {
        let cfg = HSBlockConfig::new(8, 1.0, 2, 1)
            .unwrap()
            .with_constant_weights(1.0)
            .unwrap();
        let x = Tensor::zeros(vec![6, 2, 2]);
        assert!(matches!(cfg.forward(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn constructed_count_reports_actual_filters() {
        // widths [16,24,28,30]: filters F2..F4 have widths 24,28,30
        let cfg = HSBlockConfig::new(16, 4.0, 4, 3).unwrap();
        let expect = 9 * (24 * 24 + 28 * 28 + 30 * 30) as u64;
        assert_eq!(cfg.constructed_param_count(), expect);
    }

    #[test]
    fn graph_forward_matches_forward() {
        use std::collections::HashMap;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = HSBlockConfig::new(8, 1.0, 2, 3)
            .unwrap()
            .with_seeded_weights(&mut rng)
            .unwrap();
        let n = 8 * 3 * 3;
        let data: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) / 6.5 - 1.0).collect();
        let x = Tensor::new(vec![8, 3, 3], data).unwrap();

        let mut g = Graph::new();
        let xn = g.leaf("x");
        let y = cfg.graph_forward(&mut g, xn).unwrap();
        let total = g.sum(y);
        g.set_output(total);
        let mut leaves = HashMap::new();
        leaves.insert("x".to_string(), x.clone());
        let via_graph = g.evaluate(&leaves).unwrap();
        let direct = cfg.forward(&x).unwrap().sum();
        assert!((via_graph - direct).abs() < 1e-12);
    }
}
