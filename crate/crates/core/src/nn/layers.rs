use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::gemm::{matmul, matmul_ld};
use super::{Real, Tensor3};

/// Lower clamp applied to the true-class probability inside the log.
pub const CE_CLIP: f64 = 1e-12;

/// Stride-1 "same" convolution (cross-correlation, no kernel flip).
///
/// Weights are laid out `(filters, in_channels, kernel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    filters: usize,
    in_channels: usize,
    kernel: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new(weights: Vec<T>, bias: Vec<T>, filters: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        if filters == 0 || in_channels == 0 || kernel == 0 {
            return Err(Error::Shape("conv dimensions must be positive".into()));
        }
        if weights.len() != filters * in_channels * kernel || bias.len() != filters {
            return Err(Error::Shape(format!(
                "conv expects {} weights and {filters} biases, got {} and {}",
                filters * in_channels * kernel,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            filters,
            in_channels,
            kernel,
        })
    }

    /// He-normal weights (variance `2 / (in_channels · kernel)`), zero bias.
    pub fn he_init(filters: usize, in_channels: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        let weights = he_normal(filters * in_channels * kernel, in_channels * kernel, rng);
        Self::new(weights, vec![T::zero(); filters], filters, in_channels, kernel)
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Zeros padded on the right: how far past position `i` output `i` reads.
    pub fn pad_right(&self) -> usize {
        self.kernel - 1 - self.pad_left()
    }
}

/// Fully connected layer, weights laid out `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    outputs: usize,
    inputs: usize,
}

impl<T: Real> Dense<T> {
    pub fn new(weights: Vec<T>, bias: Vec<T>, outputs: usize, inputs: usize) -> Result<Self> {
        if outputs == 0 || inputs == 0 {
            return Err(Error::Shape("dense dimensions must be positive".into()));
        }
        if weights.len() != outputs * inputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense expects {} weights and {outputs} biases, got {} and {}",
                outputs * inputs,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            outputs,
            inputs,
        })
    }

    pub fn he_init(outputs: usize, inputs: usize, rng: &mut Rng) -> Result<Self> {
        let weights = he_normal(outputs * inputs, inputs, rng);
        Self::new(weights, vec![T::zero(); outputs], outputs, inputs)
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }
}

fn he_normal<T: Real>(n: usize, fan_in: usize, rng: &mut Rng) -> Vec<T> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    Relu,
    Dropout { rate: f64 },
    MaxPool { pool: usize },
    Flatten,
    Dense(Dense<T>),
    Softmax,
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
            Layer::MaxPool { .. } => "maxpool1d",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weights.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Valid output range `lo..hi` (within the first `width` outputs) for
/// kernel tap `j`, whose source index is `i + j - pad_left`.
fn tap_range(j: usize, pad_left: usize, length: usize, width: usize) -> (usize, usize, isize) {
    let shift = j as isize - pad_left as isize;
    let lo = (-shift).clamp(0, width as isize) as usize;
    let hi = (length as isize - shift).clamp(0, width as isize) as usize;
    (lo, hi.max(lo), shift)
}

/// Patch matrix `(C·K) × width` for the first `width` output positions.
fn im2col<T: Real>(x: &[T], channels: usize, length: usize, kernel: usize, pad_left: usize, width: usize, col: &mut [T]) {
    for c in 0..channels {
        let src = &x[c * length..(c + 1) * length];
        for j in 0..kernel {
            let row = &mut col[(c * kernel + j) * width..(c * kernel + j + 1) * width];
            let (lo, hi, shift) = tap_range(j, pad_left, length, width);
            row[..lo].fill(T::zero());
            row[hi..].fill(T::zero());
            if hi > lo {
                let s0 = (lo as isize + shift) as usize;
                row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], channels: usize, length: usize, kernel: usize, pad_left: usize, width: usize, dx: &mut [T]) {
    for c in 0..channels {
        let dst = &mut dx[c * length..(c + 1) * length];
        for j in 0..kernel {
            let row = &col[(c * kernel + j) * width..(c * kernel + j + 1) * width];
            let (lo, hi, shift) = tap_range(j, pad_left, length, width);
            if hi > lo {
                let s0 = (lo as isize + shift) as usize;
                for (d, &g) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                    *d += g;
                }
            }
        }
    }
}

/// `out[b,f,i] = bias[f] + Σ_{c,j} in[b, c, i+j−padL] · w[f,c,j]` with
/// `padL = ⌊(K−1)/2⌋` zeros on the left and `⌈(K−1)/2⌉` on the right.
pub fn conv1d_forward<T: Real>(input: &Tensor3<T>, layer: &Conv1d<T>) -> Result<Tensor3<T>> {
    conv1d_forward_prefix(input, layer, input.length())
}

/// [`conv1d_forward`] restricted to output positions `0..live`; the rest of
/// the output is left at zero. Used when later layers never read the tail.
pub fn conv1d_forward_prefix<T: Real>(input: &Tensor3<T>, layer: &Conv1d<T>, live: usize) -> Result<Tensor3<T>> {
    let (batch, channels, length) = input.shape();
    if channels != layer.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {channels}",
            layer.in_channels
        )));
    }
    let live = live.min(length);
    let (f, k) = (layer.filters, layer.kernel);
    let ck = channels * k;
    let mut out = Tensor3::zeros(batch, f, length);
    let mut col = vec![T::zero(); ck * live];
    // one GEMM per sample: the patch matrix stays cache-resident
    for b in 0..batch {
        im2col(input.sample(b), channels, length, k, layer.pad_left(), live, &mut col);
        let dst = out.sample_mut(b);
        for (row, &bias) in dst.chunks_exact_mut(length).zip(&layer.bias) {
            row[..live].fill(bias);
        }
        matmul_ld(f, ck, live, &layer.weights, ck, false, &col, live, false, T::one(), dst, length);
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`; the input gradient is
/// skipped when `need_input_grad` is false.
pub fn conv1d_backward<T: Real>(
    input: &Tensor3<T>,
    layer: &Conv1d<T>,
    grad_out: &Tensor3<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor3<T>>, Vec<T>, Vec<T>)> {
    conv1d_backward_prefix(input, layer, grad_out, need_input_grad, input.length())
}

/// [`conv1d_backward`] for an output gradient that is zero beyond position
/// `live`; only the first `live` columns of `grad_out` are read.
pub fn conv1d_backward_prefix<T: Real>(
    input: &Tensor3<T>,
    layer: &Conv1d<T>,
    grad_out: &Tensor3<T>,
    need_input_grad: bool,
    live: usize,
) -> Result<(Option<Tensor3<T>>, Vec<T>, Vec<T>)> {
    let (batch, channels, length) = input.shape();
    if grad_out.shape() != (batch, layer.filters, length) || channels != layer.in_channels {
        return Err(Error::Shape("conv backward received mismatched shapes".into()));
    }
    let live = live.min(length);
    let (f, k) = (layer.filters, layer.kernel);
    let ck = channels * k;
    let mut gw = vec![T::zero(); f * ck];
    let mut gb = vec![T::zero(); f];
    let mut gx = need_input_grad.then(|| Tensor3::zeros(batch, channels, length));
    let mut col = vec![T::zero(); ck * live];
    let mut dcol = vec![T::zero(); if need_input_grad { ck * live } else { 0 }];
    for b in 0..batch {
        let g = grad_out.sample(b);
        for (acc, row) in gb.iter_mut().zip(g.chunks_exact(length)) {
            *acc += row[..live].iter().copied().sum::<T>();
        }
        im2col(input.sample(b), channels, length, k, layer.pad_left(), live, &mut col);
        matmul_ld(f, live, ck, g, length, false, &col, live, true, T::one(), &mut gw, ck);
        if let Some(gx) = gx.as_mut() {
            matmul_ld(ck, f, live, &layer.weights, ck, true, g, length, false, T::zero(), &mut dcol, live);
            col2im(&dcol, channels, length, k, layer.pad_left(), live, gx.sample_mut(b));
        }
    }
    Ok((gx, gw, gb))
}

pub fn relu_forward<T: Real>(input: &Tensor3<T>) -> Tensor3<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor3<T>, grad_out: &Tensor3<T>) -> Tensor3<T> {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::zero()) {
            *gv = T::zero();
        }
    }
    g
}

/// Inverted dropout. In train mode returns the applied per-element scale
/// (`0` or `1/(1−rate)`) so backward can reuse it.
pub fn dropout_forward<T: Real>(
    input: &Tensor3<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut Rng,
) -> Result<(Tensor3<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == DropoutMode::Infer {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let mask: Vec<T> = (0..input.data().len())
        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
        .collect();
    let out = apply_mask(input, &mask);
    Ok((out, Some(mask)))
}

pub(crate) fn apply_mask<T: Real>(input: &Tensor3<T>, mask: &[T]) -> Tensor3<T> {
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    out
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor3<T>, mask: Option<&[T]>) -> Tensor3<T> {
    match mask {
        Some(mask) => apply_mask(grad_out, mask),
        None => grad_out.clone(),
    }
}

/// Number of leading input positions a max-pool over `length` reads.
pub fn maxpool_span(length: usize, pool: usize) -> usize {
    if length < pool {
        length
    } else {
        length / pool * pool
    }
}

/// Non-overlapping max-pool with stride = `pool`. Output length is
/// `max(1, ⌊L/pool⌋)`; when `L < pool` the single window spans the whole
/// signal. Also returns the flat input index of each selected maximum (the
/// first one on ties).
pub fn maxpool1d_forward<T: Real>(input: &Tensor3<T>, pool: usize) -> Result<(Tensor3<T>, Vec<usize>)> {
    if pool == 0 {
        return Err(Error::Argument("pool size must be positive".into()));
    }
    let (batch, channels, length) = input.shape();
    let (windows, width) = if length < pool { (1, length) } else { (length / pool, pool) };
    let mut out = Tensor3::zeros(batch, channels, windows);
    let mut argmax = Vec::with_capacity(batch * channels * windows);
    let src = input.data();
    for (row, dst) in out.data_mut().chunks_exact_mut(windows).enumerate() {
        let base = row * length;
        for (w, slot) in dst.iter_mut().enumerate() {
            let start = base + w * width;
            let mut best = start;
            for i in start + 1..start + width {
                if src[i] > src[best] {
                    best = i;
                }
            }
            *slot = src[best];
            argmax.push(best);
        }
    }
    Ok((out, argmax))
}

pub fn maxpool1d_backward<T: Real>(
    grad_out: &Tensor3<T>,
    argmax: &[usize],
    input_shape: (usize, usize, usize),
) -> Tensor3<T> {
    let (b, c, l) = input_shape;
    let mut g = Tensor3::zeros(b, c, l);
    let dst = g.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        dst[idx] += v;
    }
    g
}

/// `out = x · Wᵀ + bias` on the input flattened to `(B, C·L)`; the result
/// has shape `(B, O, 1)`.
pub fn dense_forward<T: Real>(input: &Tensor3<T>, layer: &Dense<T>) -> Result<Tensor3<T>> {
    let batch = input.batch();
    if input.sample_len() != layer.inputs {
        return Err(Error::Shape(format!(
            "dense expects {} inputs, got {}",
            layer.inputs,
            input.sample_len()
        )));
    }
    let mut out = Tensor3::zeros(batch, layer.outputs, 1);
    for row in out.data_mut().chunks_exact_mut(layer.outputs) {
        row.copy_from_slice(&layer.bias);
    }
    matmul(
        batch,
        layer.inputs,
        layer.outputs,
        input.data(),
        false,
        &layer.weights,
        true,
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`; `grad_input` has the
/// original (unflattened) input shape.
pub fn dense_backward<T: Real>(
    input: &Tensor3<T>,
    layer: &Dense<T>,
    grad_out: &Tensor3<T>,
) -> Result<(Tensor3<T>, Vec<T>, Vec<T>)> {
    let batch = input.batch();
    if input.sample_len() != layer.inputs || grad_out.shape() != (batch, layer.outputs, 1) {
        return Err(Error::Shape("dense backward received mismatched shapes".into()));
    }
    let (o, i) = (layer.outputs, layer.inputs);
    let mut gw = vec![T::zero(); o * i];
    matmul(o, batch, i, grad_out.data(), true, input.data(), false, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); o];
    for row in grad_out.data().chunks_exact(o) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut gx = Tensor3::zeros(batch, input.channels(), input.length());
    matmul(batch, o, i, grad_out.data(), false, &layer.weights, false, T::zero(), gx.data_mut());
    Ok((gx, gw, gb))
}

/// Row-wise softmax over each sample's `C·L` values, shifted by the row max.
pub fn softmax<T: Real>(logits: &Tensor3<T>) -> Result<Tensor3<T>> {
    logits.ensure_finite("softmax logits")?;
    let mut out = logits.clone();
    let n = out.sample_len();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)` per row.
pub fn softmax_backward<T: Real>(probs: &Tensor3<T>, grad_out: &Tensor3<T>) -> Tensor3<T> {
    let mut g = grad_out.clone();
    let n = probs.sample_len();
    for (grow, prow) in g.data_mut().chunks_exact_mut(n).zip(probs.data().chunks_exact(n)) {
        let dot: T = grow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
        for (gv, &p) in grow.iter_mut().zip(prow) {
            *gv = p * (*gv - dot);
        }
    }
    g
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Argument(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// Mean of `−ln(clamp(p[y], CE_CLIP, 1))` over the batch, in `f64`.
pub fn cross_entropy_loss<T: Real>(probs: &Tensor3<T>, labels: &[usize]) -> Result<f64> {
    let n = probs.sample_len();
    check_labels(labels, probs.batch(), n)?;
    let mut total = 0.0;
    for (row, &y) in probs.data().chunks_exact(n).zip(labels) {
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("probability row sums to {sum}, not 1")));
        }
        total -= row[y].as_f64().clamp(CE_CLIP, 1.0).ln();
    }
    Ok(total / probs.batch() as f64)
}

/// Gradient of the mean cross-entropy with respect to the softmax input:
/// `(p − onehot(y)) / B`.
pub fn fused_softmax_ce_grad<T: Real>(probs: &Tensor3<T>, labels: &[usize]) -> Result<Tensor3<T>> {
    let n = probs.sample_len();
    check_labels(labels, probs.batch(), n)?;
    let inv_b = T::from_f64(1.0 / probs.batch() as f64);
    let mut g = probs.clone();
    for (row, &y) in g.data_mut().chunks_exact_mut(n).zip(labels) {
        row[y] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t1(v: &[f64]) -> Tensor3<f64> {
        Tensor3::from_rows(&[v]).unwrap()
    }

    fn conv(w: Vec<f64>, f: usize, c: usize, k: usize) -> Conv1d<f64> {
        Conv1d::new(w, vec![0.0; f], f, c, k).unwrap()
    }

    #[test]
    fn conv_hand_examples() {
        let out = conv1d_forward(&t1(&[1.0, 2.0, 3.0]), &conv(vec![1.0, 0.0, -1.0], 1, 1, 3)).unwrap();
        assert_eq!(out.data(), &[-2.0, -2.0, 2.0]);

        let x = t1(&[0.5, -1.0, 7.0, 2.0]);
        assert_eq!(conv1d_forward(&x, &conv(vec![1.0], 1, 1, 1)).unwrap(), x);

        let two = Tensor3::from_vec(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0], 1, 2, 3).unwrap();
        let out = conv1d_forward(&two, &conv(vec![1.0, 1.0], 1, 2, 1)).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn conv_even_kernel_pads_more_on_the_right() {
        // K=2: padL=0, padR=1, out[i] = x[i]*w0 + x[i+1]*w1
        let out = conv1d_forward(&t1(&[1.0, 2.0, 3.0]), &conv(vec![1.0, 10.0], 1, 1, 2)).unwrap();
        assert_eq!(out.data(), &[21.0, 32.0, 3.0]);
    }

    #[test]
    fn kernel_longer_than_input_matches_the_definition() {
        // K=7 on L=2: padL=3, so only taps 3 and 4 ever touch real samples
        let w: Vec<f64> = (1..=7).map(f64::from).collect();
        let c = conv(w, 1, 1, 7);
        let x = t1(&[2.0, -1.0]);
        let out = conv1d_forward(&x, &c).unwrap();
        assert_eq!(out.data(), &[2.0 * 4.0 - 5.0, 2.0 * 3.0 - 4.0]);
        let (gx, gw, _) = conv1d_backward(&x, &c, &t1(&[1.0, 1.0]), true).unwrap();
        assert_eq!(gx.unwrap().data(), &[4.0 + 3.0, 5.0 + 4.0]);
        assert_eq!(gw, vec![0.0, 0.0, 2.0, 1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let c = conv(vec![1.0, 1.0], 1, 2, 1);
        assert!(matches!(conv1d_forward(&t1(&[1.0]), &c), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_forward(&t1(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&t1(&[-1.0, -3.0])).data(), &[0.0, 0.0]);
        let pos = t1(&[0.0, 1.0, 4.5]);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn dropout_identities_and_errors() {
        let x = t1(&[1.0, -2.0, 3.0, 4.0]);
        let mut r = rng::seeded(0);
        assert_eq!(dropout_forward(&x, 0.0, DropoutMode::Train, &mut r).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.7, DropoutMode::Infer, &mut r).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, DropoutMode::Train, &mut r).is_err());
        assert!(dropout_forward(&x, -0.1, DropoutMode::Train, &mut r).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let n = 1_000_000;
        let x = Tensor3::from_vec(vec![1.0f64; n], 1, 1, n).unwrap();
        let (out, mask) = dropout_forward(&x, 0.2, DropoutMode::Train, &mut rng::seeded(99)).unwrap();
        let kept = mask.unwrap().iter().filter(|&&m| m != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.8).abs() < 0.005, "kept {kept}");
        let mean = out.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn maxpool_examples() {
        let (out, idx) = maxpool1d_forward(&t1(&[1.0, 3.0, 2.0, 5.0, 4.0]), 2).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        assert_eq!(idx, vec![1, 3]);

        let long: Vec<f64> = (0..26).map(|i| ((i * 7) % 26) as f64).collect();
        let (out, _) = maxpool1d_forward(&t1(&long), 128).unwrap();
        assert_eq!(out.data(), &[25.0]);

        let (out, _) = maxpool1d_forward(&t1(&[2.0; 8]), 3).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0]);

        assert!(maxpool1d_forward(&t1(&[1.0]), 0).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t1(&[1.0, 3.0, 2.0, 5.0, 4.0]);
        let (_, idx) = maxpool1d_forward(&x, 2).unwrap();
        let g = maxpool1d_backward(&t1(&[10.0, 20.0]), &idx, x.shape());
        assert_eq!(g.data(), &[0.0, 10.0, 0.0, 20.0, 0.0]);
    }

    #[test]
    fn dense_examples() {
        let eye = Dense::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2).unwrap();
        let x = Tensor3::from_vec(vec![3.0, -4.0], 1, 2, 1).unwrap();
        assert_eq!(dense_forward(&x, &eye).unwrap(), x);

        let d = Dense::new(vec![1.0, 1.0], vec![1.0], 1, 2).unwrap();
        let out = dense_forward(&Tensor3::from_vec(vec![1.0, 1.0], 1, 2, 1).unwrap(), &d).unwrap();
        assert_eq!(out.data(), &[3.0]);

        let d = Dense::new(vec![0.3, -0.2, 5.0, 1.0], vec![0.25, -1.5], 2, 2).unwrap();
        let out = dense_forward(&Tensor3::zeros(1, 1, 2), &d).unwrap();
        assert_eq!(out.data(), &[0.25, -1.5]);

        assert!(matches!(dense_forward(&t1(&[1.0, 2.0, 3.0]), &d), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor3::<f64>::from_vec(vec![0.0, 0.0], 1, 2, 1).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let a = softmax(&Tensor3::<f64>::from_vec(vec![0.3, -1.2], 1, 2, 1).unwrap()).unwrap();
        let b = softmax(&Tensor3::<f64>::from_vec(vec![100.3, 98.8], 1, 2, 1).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let p = softmax(&Tensor3::<f64>::from_vec(vec![1000.0, 0.0], 1, 2, 1).unwrap()).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1].abs() < 1e-12);

        let bad = Tensor3::<f64>::from_vec(vec![f64::NAN, 0.0], 1, 2, 1).unwrap();
        assert!(matches!(softmax(&bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = Tensor3::<f64>::from_vec(vec![0.0, 1.0], 1, 2, 1).unwrap();
        assert_eq!(cross_entropy_loss(&perfect, &[1]).unwrap(), 0.0);

        let half = Tensor3::<f64>::from_vec(vec![0.5, 0.5, 0.5, 0.5], 2, 2, 1).unwrap();
        assert!((cross_entropy_loss(&half, &[0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let wrong = Tensor3::<f64>::from_vec(vec![1.0, 0.0], 1, 2, 1).unwrap();
        let l = cross_entropy_loss(&wrong, &[1]).unwrap();
        assert!((l - 27.631021115928547).abs() < 1e-9, "{l}");

        assert!(matches!(cross_entropy_loss(&wrong, &[2]), Err(Error::Argument(_))));
    }

    #[test]
    fn fused_gradient_is_p_minus_onehot_over_batch() {
        let p = Tensor3::<f64>::from_vec(vec![0.2, 0.8, 0.6, 0.4], 2, 2, 1).unwrap();
        let g = fused_softmax_ce_grad(&p, &[1, 0]).unwrap();
        let expect = [0.1, -0.1, -0.2, 0.2];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
