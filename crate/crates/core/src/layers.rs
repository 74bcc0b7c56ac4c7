//! Synaptic transforms applied once per time step, each with an exact adjoint.
//!
//! Weight layout is `out_channels × in_channels × kh × kw` for both plain and
//! transposed convolutions. There are no bias terms: a bias would inject drive
//! on every step and break event sparsity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            transposed: false,
        }
    }

    pub fn conv_transpose(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (0, 0),
            transposed: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if self.transposed {
            let oh = ((h.max(1) - 1) * sh + kh).checked_sub(2 * ph);
            let ow = ((w.max(1) - 1) * sw + kw).checked_sub(2 * pw);
            match (oh, ow) {
                (Some(oh), Some(ow)) if oh > 0 && ow > 0 && h > 0 && w > 0 => Ok((oh, ow)),
                _ => Err(Error::shape(format!("transposed conv of {h}x{w} is empty"))),
            }
        } else {
            if h + 2 * ph < kh || w + 2 * pw < kw {
                return Err(Error::shape(format!(
                    "{h}x{w} input smaller than {kh}x{kw} kernel"
                )));
            }
            Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
        }
    }

    /// The spec of the adjoint map: channels swapped, transposition toggled.
    pub fn adjoint(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            transposed: !self.transposed,
            ..*self
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Inputs feeding one output value, accounting for stride overlap.
    pub fn fan_in(&self) -> f64 {
        let k = (self.in_channels * self.kernel.0 * self.kernel.1) as f64;
        if self.transposed {
            k / (self.stride.0 * self.stride.1) as f64
        } else {
            k
        }
    }
}

/// Convolution kernel, `out × in × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f64>,
}

impl Weights {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            out_channels: spec.out_channels,
            in_channels: spec.in_channels,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            data: vec![0.0; spec.weight_len()],
        }
    }

    pub fn from_vec(spec: &ConvSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.weight_len() {
            return Err(Error::shape(format!(
                "{} weights for spec needing {}",
                data.len(),
                spec.weight_len()
            )));
        }
        Ok(Self {
            data,
            ..Self::zeros(spec)
        })
    }

    /// Kaiming-uniform fan-in initialisation for ReLU units.
    pub fn kaiming_uniform<R: Rng>(spec: &ConvSpec, rng: &mut R) -> Self {
        let bound = (6.0 / spec.fan_in()).sqrt();
        let mut w = Self::zeros(spec);
        for v in &mut w.data {
            *v = rng.gen_range(-bound..bound);
        }
        w
    }

    /// Identity across channels at the kernel centre plus `U(-noise, noise)`.
    /// Lets a residual path through an output projection start open.
    pub fn identity_perturbed<R: Rng>(spec: &ConvSpec, noise: f64, rng: &mut R) -> Self {
        let mut w = Self::zeros(spec);
        for v in &mut w.data {
            *v = rng.gen_range(-noise..noise);
        }
        let (cy, cx) = (w.kh / 2, w.kw / 2);
        for o in 0..w.out_channels.min(w.in_channels) {
            let i = w.index(o, o, cy, cx);
            w.data[i] += 1.0;
        }
        w
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + c) * self.kh + ky) * self.kw + kx]
    }

    #[inline]
    fn index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + c) * self.kh + ky) * self.kw + kx
    }

    /// Swaps the in/out axes, giving the kernel of the adjoint map.
    pub fn transpose_io(&self) -> Weights {
        let mut t = Weights {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            kh: self.kh,
            kw: self.kw,
            data: vec![0.0; self.data.len()],
        };
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = t.index(c, o, ky, kx);
                        t.data[dst] = self.at(o, c, ky, kx);
                    }
                }
            }
        }
        t
    }

    fn check(&self, spec: &ConvSpec) -> Result<()> {
        if (self.out_channels, self.in_channels, self.kh, self.kw)
            != (spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1)
        {
            return Err(Error::shape("weights do not match conv spec"));
        }
        Ok(())
    }
}

/// Maps input row/column `i` through kernel tap `k` to an output index of a
/// strided cross-correlation, if one exists.
#[inline]
fn conv_target(i: usize, k: usize, pad: usize, stride: usize, out: usize) -> Option<usize> {
    let num = (i + pad).checked_sub(k)?;
    if num % stride != 0 {
        return None;
    }
    let o = num / stride;
    (o < out).then_some(o)
}

/// Output index of a transposed convolution for input `i` and tap `k`.
#[inline]
fn transpose_target(i: usize, k: usize, pad: usize, stride: usize, out: usize) -> Option<usize> {
    let o = (i * stride + k).checked_sub(pad)?;
    (o < out).then_some(o)
}

fn check_input(spec: &ConvSpec, weights: &Weights, x: &Tensor3, transposed: bool) -> Result<(usize, usize)> {
    if spec.transposed != transposed {
        return Err(Error::shape(format!(
            "spec transposed={} used with {} op",
            spec.transposed,
            if transposed { "transposed" } else { "plain" }
        )));
    }
    weights.check(spec)?;
    if x.channels != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            x.channels, spec.in_channels
        )));
    }
    spec.output_hw(x.height, x.width)
}

/// Generic scatter: every nonzero input fans out along the taps selected by
/// `target`. Zero inputs cost nothing, which is what makes sparse messages cheap.
fn scatter(
    spec: &ConvSpec,
    weights: &Weights,
    x: &Tensor3,
    out_hw: (usize, usize),
    target: fn(usize, usize, usize, usize, usize) -> Option<usize>,
) -> Tensor3 {
    let (oh, ow) = out_hw;
    let mut out = Tensor3::zeros(spec.out_channels, oh, ow);
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    for c in 0..x.channels {
        for iy in 0..x.height {
            for ix in 0..x.width {
                let v = x[(c, iy, ix)];
                if v == 0.0 {
                    continue;
                }
                for ky in 0..kh {
                    let Some(oy) = target(iy, ky, ph, sh, oh) else { continue };
                    for kx in 0..kw {
                        let Some(ox) = target(ix, kx, pw, sw, ow) else { continue };
                        for o in 0..spec.out_channels {
                            out[(o, oy, ox)] += weights.at(o, c, ky, kx) * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`scatter`]: returns `(grad_in, grad_weights)`.
fn scatter_backward(
    spec: &ConvSpec,
    weights: &Weights,
    x: &Tensor3,
    grad_out: &Tensor3,
    target: fn(usize, usize, usize, usize, usize) -> Option<usize>,
) -> (Tensor3, Weights) {
    let (oh, ow) = (grad_out.height, grad_out.width);
    let mut grad_in = Tensor3::zeros(x.channels, x.height, x.width);
    let mut grad_w = Weights::zeros(spec);
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    for c in 0..x.channels {
        for iy in 0..x.height {
            for ix in 0..x.width {
                let v = x[(c, iy, ix)];
                let mut acc = 0.0;
                for ky in 0..kh {
                    let Some(oy) = target(iy, ky, ph, sh, oh) else { continue };
                    for kx in 0..kw {
                        let Some(ox) = target(ix, kx, pw, sw, ow) else { continue };
                        for o in 0..spec.out_channels {
                            let g = grad_out[(o, oy, ox)];
                            if g == 0.0 {
                                continue;
                            }
                            let wi = grad_w.index(o, c, ky, kx);
                            acc += weights.data[wi] * g;
                            grad_w.data[wi] += v * g;
                        }
                    }
                }
                grad_in[(c, iy, ix)] = acc;
            }
        }
    }
    (grad_in, grad_w)
}

/// Zero-padded strided cross-correlation.
pub fn conv2d(spec: &ConvSpec, weights: &Weights, x: &Tensor3) -> Result<Tensor3> {
    let hw = check_input(spec, weights, x, false)?;
    Ok(scatter(spec, weights, x, hw, conv_target))
}

/// Transposed convolution; the adjoint of [`conv2d`] under [`ConvSpec::adjoint`]
/// and [`Weights::transpose_io`].
pub fn conv_transpose2d(spec: &ConvSpec, weights: &Weights, x: &Tensor3) -> Result<Tensor3> {
    let hw = check_input(spec, weights, x, true)?;
    Ok(scatter(spec, weights, x, hw, transpose_target))
}

/// Gradients of [`conv2d`] with respect to its input and weights.
pub fn conv2d_backward(
    spec: &ConvSpec,
    weights: &Weights,
    x: &Tensor3,
    grad_out: &Tensor3,
) -> Result<(Tensor3, Weights)> {
    let (oh, ow) = check_input(spec, weights, x, false)?;
    grad_out.check_shape((spec.out_channels, oh, ow), "conv2d grad_out")?;
    Ok(scatter_backward(spec, weights, x, grad_out, conv_target))
}

/// Gradients of [`conv_transpose2d`] with respect to its input and weights.
pub fn conv_transpose2d_backward(
    spec: &ConvSpec,
    weights: &Weights,
    x: &Tensor3,
    grad_out: &Tensor3,
) -> Result<(Tensor3, Weights)> {
    let (oh, ow) = check_input(spec, weights, x, true)?;
    grad_out.check_shape((spec.out_channels, oh, ow), "conv_transpose2d grad_out")?;
    Ok(scatter_backward(spec, weights, x, grad_out, transpose_target))
}

/// Mean-only batch normalisation: subtracts a per-channel mean, never scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanOnlyBatchNorm {
    pub running_mean: Vec<f64>,
    pub momentum: f64,
}

impl MeanOnlyBatchNorm {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Per-channel mean over every map in the batch.
    pub fn batch_mean(&self, batch: &[Tensor3]) -> Result<Vec<f64>> {
        let c = self.channels();
        let mut sums = vec![0.0; c];
        let mut n = 0usize;
        for x in batch {
            if x.channels != c {
                return Err(Error::shape(format!(
                    "batch norm over {c} channels got {}",
                    x.channels
                )));
            }
            let plane = x.height * x.width;
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += x.data[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
            n += plane;
        }
        if n == 0 {
            return Err(Error::Empty("batch norm over an empty batch"));
        }
        Ok(sums.into_iter().map(|s| s / n as f64).collect())
    }

    /// Exponential moving average toward `batch_mean`.
    pub fn update_running(&mut self, batch_mean: &[f64]) {
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - self.momentum) * *r + self.momentum * b;
        }
    }

    /// Training: subtract the batch mean and update the running mean.
    /// Inference: subtract the running mean.
    pub fn forward(&mut self, batch: &[Tensor3], training: bool) -> Result<Vec<Tensor3>> {
        let mean = if training {
            let m = self.batch_mean(batch)?;
            self.update_running(&m);
            m
        } else {
            if let Some(x) = batch.iter().find(|x| x.channels != self.channels()) {
                return Err(Error::shape(format!(
                    "batch norm over {} channels got {}",
                    self.channels(),
                    x.channels
                )));
            }
            self.running_mean.clone()
        };
        Ok(batch.iter().map(|x| subtract_channel_mean(x, &mean)).collect())
    }
}

pub fn subtract_channel_mean(x: &Tensor3, mean: &[f64]) -> Tensor3 {
    let plane = x.height * x.width;
    let mut out = x.clone();
    for (ch, m) in mean.iter().enumerate() {
        for v in &mut out.data[ch * plane..(ch + 1) * plane] {
            *v -= m;
        }
    }
    out
}

/// Adjoint of [`MeanOnlyBatchNorm::forward`]. In training mode the batch mean
/// depends on the inputs, so the per-channel mean of the gradient is removed.
pub fn batchnorm_backward(grads: &[Tensor3], training: bool) -> Result<Vec<Tensor3>> {
    if !training {
        return Ok(grads.to_vec());
    }
    let Some(first) = grads.first() else {
        return Ok(Vec::new());
    };
    let bn = MeanOnlyBatchNorm::new(first.channels, 0.0);
    let mean = bn.batch_mean(grads)?;
    Ok(grads.iter().map(|g| subtract_channel_mean(g, &mean)).collect())
}

/// Inverted-dropout keep mask: entries are `0` or `1 / (1 − rate)`. All ones
/// outside training. The same mask is meant to be reused for every step of a
/// sequence.
pub fn dropout_mask(
    shape: (usize, usize, usize),
    rate: f64,
    seed: u64,
    training: bool,
) -> Result<Tensor3> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
    }
    let (c, h, w) = shape;
    if !training || rate == 0.0 {
        return Ok(Tensor3::filled(c, h, w, 1.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let data = (0..c * h * w)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor3::from_vec(c, h, w, data)
}

/// Replicates every pixel into a 2×2 block.
pub fn upsample2x_nearest(x: &Tensor3) -> Tensor3 {
    let (c, h, w) = x.shape();
    let mut out = Tensor3::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(ch, y, xx)] = x[(ch, y / 2, xx / 2)];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x_nearest`]: sums each 2×2 block.
pub fn upsample2x_backward(grad_out: &Tensor3) -> Result<Tensor3> {
    let (c, h2, w2) = grad_out.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape(format!("upsample gradient {h2}x{w2} is not even")));
    }
    let mut g = Tensor3::zeros(c, h2 / 2, w2 / 2);
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                g[(ch, y / 2, x / 2)] += grad_out[(ch, y, x)];
            }
        }
    }
    Ok(g)
}
