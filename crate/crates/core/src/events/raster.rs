//! Dense time-binned views of event streams.

use super::{EventStream, POLARITIES};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Step-major dense activity: `steps × channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    pub steps: usize,
    /// Step size in milliseconds.
    pub dt_ms: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// All values are in {0, 1}.
    pub binary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulate {
    /// Clamp each cell to 1.
    Binary,
    /// Count events per cell.
    Count,
}

impl SpikeTensor {
    pub fn zeros(steps: usize, dt_ms: f64, channels: usize, height: usize, width: usize) -> Self {
        Self {
            steps,
            dt_ms,
            channels,
            height,
            width,
            values: vec![0.0; steps * channels * height * width],
            binary: true,
        }
    }

    /// Stacks per-step maps. All frames must share one shape.
    pub fn from_frames(dt_ms: f64, frames: &[Tensor3], binary: bool) -> Result<Self> {
        let first = frames
            .first()
            .ok_or(Error::Empty("spike tensor needs at least one step"))?;
        let (c, h, w) = first.shape();
        let mut values = Vec::with_capacity(frames.len() * first.len());
        for f in frames {
            f.check_shape((c, h, w), "frame")?;
            values.extend_from_slice(&f.data);
        }
        Ok(Self {
            steps: frames.len(),
            dt_ms,
            channels: c,
            height: h,
            width: w,
            values,
            binary,
        })
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, step: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[step * n..(step + 1) * n]
    }

    pub fn frame_mut(&mut self, step: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.values[step * n..(step + 1) * n]
    }

    pub fn frame_tensor(&self, step: usize) -> Tensor3 {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.frame(step).to_vec(),
        }
    }

    pub fn same_layout(&self, other: &SpikeTensor) -> bool {
        self.steps == other.steps
            && self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
            && self.dt_ms == other.dt_ms
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn horizon_ms(&self) -> f64 {
        self.steps as f64 * self.dt_ms
    }
}

/// Bins a stream into `steps` frames of `dt_ms` each. Events past the horizon
/// land in the final step.
pub fn rasterize(
    stream: &EventStream,
    dt_ms: f64,
    steps: usize,
    accumulate: Accumulate,
) -> Result<SpikeTensor> {
    if !(dt_ms > 0.0) || !dt_ms.is_finite() {
        return Err(Error::invalid(format!("dt_ms must be positive, got {dt_ms}")));
    }
    if steps == 0 {
        return Err(Error::invalid("rasterize needs at least one step"));
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut out = SpikeTensor::zeros(steps, dt_ms, POLARITIES, h, w);
    out.binary = accumulate == Accumulate::Binary;
    let dt_us = dt_ms * 1000.0;
    let frame = out.frame_len();
    for e in stream.events() {
        let step = ((e.t as f64 / dt_us).floor() as usize).min(steps - 1);
        let idx = step * frame + (e.p.channel() * h + e.y as usize) * w + e.x as usize;
        match accumulate {
            Accumulate::Binary => out.values[idx] = 1.0,
            Accumulate::Count => out.values[idx] += 1.0,
        }
    }
    Ok(out)
}

/// Anything that can be histogrammed over time per pixel and polarity.
pub trait PsthSource {
    /// `(channels, height, width)`.
    fn dims(&self) -> (usize, usize, usize);
    fn horizon_ms(&self) -> f64;
    /// Visits every unit of mass as `(time_ms, cell, value)`.
    fn for_each_mass(&self, f: &mut dyn FnMut(f64, usize, f64));
}

impl PsthSource for EventStream {
    fn dims(&self) -> (usize, usize, usize) {
        (POLARITIES, self.height as usize, self.width as usize)
    }

    fn horizon_ms(&self) -> f64 {
        self.duration as f64 / 1000.0
    }

    fn for_each_mass(&self, f: &mut dyn FnMut(f64, usize, f64)) {
        let (h, w) = (self.height as usize, self.width as usize);
        for e in self.events() {
            let cell = (e.p.channel() * h + e.y as usize) * w + e.x as usize;
            f(e.t as f64 / 1000.0, cell, 1.0);
        }
    }
}

impl PsthSource for SpikeTensor {
    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn horizon_ms(&self) -> f64 {
        SpikeTensor::horizon_ms(self)
    }

    fn for_each_mass(&self, f: &mut dyn FnMut(f64, usize, f64)) {
        for step in 0..self.steps {
            let t = step as f64 * self.dt_ms;
            for (cell, &v) in self.frame(step).iter().enumerate() {
                if v != 0.0 {
                    f(t, cell, v);
                }
            }
        }
    }
}

/// Per-bin, per-polarity, per-pixel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Psth {
    pub bin_ms: f64,
    pub t0_ms: f64,
    /// End of the interval; the last bin runs up to here.
    pub t1_ms: f64,
    pub bins: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `bins × channels × height × width`.
    pub counts: Vec<f64>,
}

impl Psth {
    pub fn bin_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn bin(&self, b: usize) -> &[f64] {
        let n = self.bin_len();
        &self.counts[b * n..(b + 1) * n]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Bin index of each simulation step of a tensor with step `dt_ms`,
    /// or `None` for steps outside the histogram interval.
    pub fn step_bins(&self, steps: usize, dt_ms: f64) -> Vec<Option<usize>> {
        (0..steps)
            .map(|s| self.bin_of(s as f64 * dt_ms))
            .collect()
    }

    fn bin_of(&self, t_ms: f64) -> Option<usize> {
        if t_ms < self.t0_ms || t_ms >= self.t1_ms {
            return None;
        }
        let b = ((t_ms - self.t0_ms) / self.bin_ms).floor() as usize;
        Some(b.min(self.bins - 1))
    }
}

/// Non-overlapping histogram of `source` over `[t0, t1)` (milliseconds).
///
/// The bin count is `⌊(t1 − t0) / bin_ms⌋` (at least one); the final bin
/// absorbs any remainder of the interval.
pub fn psth<S: PsthSource + ?Sized>(source: &S, bin_ms: f64, interval: (f64, f64)) -> Result<Psth> {
    let (t0, t1) = interval;
    if !(bin_ms > 0.0) {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_ms}")));
    }
    if !(t1 > t0) {
        return Err(Error::invalid(format!("empty PSTH interval [{t0}, {t1})")));
    }
    let bins = (((t1 - t0) / bin_ms) + 1e-9).floor().max(1.0) as usize;
    let (c, h, w) = source.dims();
    let mut out = Psth {
        bin_ms,
        t0_ms: t0,
        t1_ms: t1,
        bins,
        channels: c,
        height: h,
        width: w,
        counts: vec![0.0; bins * c * h * w],
    };
    let n = out.bin_len();
    let mut counts = std::mem::take(&mut out.counts);
    source.for_each_mass(&mut |t, cell, v| {
        if let Some(b) = out.bin_of(t) {
            counts[b * n + cell] += v;
        }
    });
    out.counts = counts;
    Ok(out)
}
