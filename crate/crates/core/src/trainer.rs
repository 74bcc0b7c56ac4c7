//! Training and evaluation loops.
//!
//! Each sample is forwarded and backpropagated on its own rayon task with
//! private neuron state. Gradients, losses and batch-norm statistics are then
//! folded in dataset order, so results do not depend on the thread count.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::events::{
    downsample_stream, rasterize, synth_moving_bar, upsample_stream_nearest, Accumulate, EventStream, MovingBar,
    PolarityMode, SpikeTensor,
};
use crate::network::{clamp_thresholds, derive_seed, Gradients, Mode, Network};
use crate::neurons::{LifParams, LifState};
use crate::objective::{loss_and_grad, psnr, rmse, LossWeights, DEFAULT_BIN_MS};
use crate::profiler::{mean_report, ComplexityReport, ModeReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub loss: LossWeights,
    pub bin_ms: f64,
    pub dt_ms: f64,
    /// Sequence length in steps; longer streams are clamped into the last step.
    pub steps: usize,
    /// Shuffling and dropout seed.
    pub seed: u64,
    /// LIF encoder turning low-resolution event counts into binary spikes.
    pub encoder: LifParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            lr0: 0.1,
            lr_decay: 0.1,
            lr_decay_every: 6,
            loss: LossWeights::default(),
            bin_ms: DEFAULT_BIN_MS,
            dt_ms: 1.0,
            steps: 100,
            seed: 0,
            encoder: LifParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return Err(Error::invalid("lr decay must be in (0, 1] with a nonzero period"));
        }
        if !(self.dt_ms > 0.0 && self.bin_ms > 0.0) || self.steps == 0 {
            return Err(Error::invalid("dt, bin width and steps must be positive"));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }
}

/// `lr0 · decay^⌊epoch / every⌋`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.lr_decay.powi((epoch / config.lr_decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "Adam over {} parameters got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {i} is {}", grads[i])));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// A low-resolution stream and its high-resolution ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub lr: EventStream,
    pub hr: EventStream,
}

impl Pair {
    pub fn validate(&self) -> Result<()> {
        let (lr, hr) = (self.lr.geometry(), self.hr.geometry());
        if hr.width != 2 * lr.width || hr.height != 2 * lr.height || hr.duration != lr.duration {
            return Err(Error::shape(format!(
                "pair geometry {}x{} ({} us) vs {}x{} ({} us)",
                lr.width, lr.height, lr.duration, hr.width, hr.height, hr.duration
            )));
        }
        Ok(())
    }
}

/// Recipe for a synthetic moving-bar dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarDataset {
    /// High-resolution width; must be even.
    pub width: u32,
    /// High-resolution height; must be even.
    pub height: u32,
    pub count: usize,
    /// Mean bar speed in pixels per millisecond.
    pub speed: f64,
    /// Per-sample speeds are uniform in `speed ± speed_jitter`.
    pub speed_jitter: f64,
    pub duration_ms: f64,
    pub polarity: PolarityMode,
    pub seed: u64,
}

/// Sample `i` is drawn from `derive_seed(seed, i)`, so a prefix of a larger
/// set equals the smaller set.
pub fn moving_bar_pairs(spec: &BarDataset) -> Result<Vec<Pair>> {
    if spec.width % 2 != 0 || spec.height % 2 != 0 {
        return Err(Error::invalid("moving-bar width and height must be even"));
    }
    if !(spec.speed_jitter >= 0.0 && spec.speed - spec.speed_jitter > 0.0) {
        return Err(Error::invalid(format!(
            "speed {} with jitter {} must stay positive",
            spec.speed, spec.speed_jitter
        )));
    }
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(spec.seed, i as u64);
            let u: f64 = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)).gen();
            let hr = synth_moving_bar(&MovingBar {
                width: spec.width,
                height: spec.height,
                speed_px_per_ms: spec.speed + spec.speed_jitter * (2.0 * u - 1.0),
                duration_ms: spec.duration_ms,
                polarity: spec.polarity,
                seed,
            })?;
            let lr = downsample_stream(&hr)?;
            Ok(Pair { lr, hr })
        })
        .collect()
}

/// A pair rasterised for the network.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pair: Pair,
    /// LIF-encoded binary low-resolution spikes.
    pub input: SpikeTensor,
    /// High-resolution event counts per step.
    pub target: SpikeTensor,
}

/// Passes per-step event counts through a LIF layer to get binary spikes.
pub fn lif_encode(counts: &SpikeTensor, params: &LifParams) -> Result<SpikeTensor> {
    params.validate()?;
    let mut out = SpikeTensor::zeros(counts.steps, counts.dt_ms, counts.channels, counts.height, counts.width);
    out.binary = true;
    let mut state = LifState::new(counts.frame_len());
    for t in 0..counts.steps {
        let frame = counts.frame(t).to_vec();
        state.step_into(params, &frame, out.frame_mut(t), None)?;
    }
    Ok(out)
}

pub fn prepare(pair: Pair, config: &TrainConfig) -> Result<Sample> {
    pair.validate()?;
    let counts = rasterize(&pair.lr, config.dt_ms, config.steps, Accumulate::Count)?;
    let input = lif_encode(&counts, &config.encoder)?;
    let target = rasterize(&pair.hr, config.dt_ms, config.steps, Accumulate::Count)?;
    Ok(Sample { pair, input, target })
}

pub fn prepare_all(pairs: Vec<Pair>, config: &TrainConfig) -> Result<Vec<Sample>> {
    pairs.into_par_iter().map(|p| prepare(p, config)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub rmse: f64,
    /// Mean messages per step summed over all layers.
    pub events_per_step: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:e} {:.6} {:.6} {:.3}",
            self.epoch, self.lr, self.loss, self.rmse, self.events_per_step
        )
    }
}

struct SampleOutcome {
    loss: f64,
    rmse: f64,
    events: f64,
    grads: Gradients,
    batch_mean: Vec<f64>,
}

fn run_sample(net: &Network, sample: &Sample, config: &TrainConfig, dropout_seed: u64) -> Result<SampleOutcome> {
    let fwd = net.forward_seeded(&sample.input, true, dropout_seed)?;
    let (parts, grad) = loss_and_grad(&fwd.output, &sample.target, &config.loss, config.bin_ms)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", parts.total)));
    }
    let cache = fwd.cache.as_ref().ok_or(Error::Empty("training forward kept no cache"))?;
    let grads = net.backward(cache, &grad)?;
    let events = crate::profiler::count_events(&fwd.trace)?.iter().sum();
    Ok(SampleOutcome {
        loss: parts.total,
        rmse: rmse(&fwd.output, &sample.target, config.bin_ms)?,
        events,
        grads,
        batch_mean: fwd.batch_mean.unwrap_or_default(),
    })
}

/// One pass over `samples` in a seeded shuffled order.
pub fn train_epoch(
    net: &mut Network,
    samples: &[Sample],
    config: &TrainConfig,
    adam: &mut AdamState,
    epoch: usize,
) -> Result<EpochStats> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let lr = lr_schedule(epoch, config);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64)));

    let (mut loss, mut err, mut events) = (0.0, 0.0, 0.0);
    for chunk in order.chunks(config.batch_size) {
        let snapshot = &*net;
        let outcomes: Vec<SampleOutcome> = chunk
            .par_iter()
            .map(|&i| {
                let seed = derive_seed(derive_seed(config.seed, epoch as u64), i as u64 + 1);
                run_sample(snapshot, &samples[i], config, seed)
            })
            .collect::<Result<_>>()?;

        let mut grads = Gradients::zeros(&net.config);
        for o in &outcomes {
            grads.add_assign(&o.grads);
            net.bn.update_running(&o.batch_mean);
            loss += o.loss;
            err += o.rmse;
            events += o.events;
        }
        grads.scale(1.0 / outcomes.len() as f64);
        let mut params = net.flat_params();
        adam.step(&mut params, &grads.flat(), lr)?;
        net.set_flat_params(&params)?;
        clamp_thresholds(net);
    }
    let n = samples.len() as f64;
    Ok(EpochStats {
        epoch,
        lr,
        loss: loss / n,
        rmse: err / n,
        events_per_step: events / n,
    })
}

/// Full training run. `on_epoch` sees every epoch's statistics as they land.
pub fn train(
    net: &mut Network,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Network) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    let mut adam = AdamState::new(net.flat_params().len());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = train_epoch(net, samples, config, &mut adam, epoch)?;
        on_epoch(&stats, net)?;
        history.push(stats);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rmse: f64,
    /// Mean over samples with a non-silent target; `None` if there are none.
    pub psnr: Option<f64>,
    pub loss: f64,
    pub report: Option<ComplexityReport>,
}

/// Inference-mode metrics over `samples`, plus a complexity report over
/// `report_modes` when that list is nonempty. The network is not modified.
pub fn evaluate(net: &Network, samples: &[Sample], config: &TrainConfig, report_modes: &[Mode]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    struct Row {
        rmse: f64,
        psnr: Option<f64>,
        loss: f64,
        report: Option<ComplexityReport>,
    }
    let rows: Vec<Row> = samples
        .par_iter()
        .map(|s| {
            let fwd = net.forward_sequence(&s.input, false)?;
            let (parts, _) = loss_and_grad(&fwd.output, &s.target, &config.loss, config.bin_ms)?;
            let psnr = if s.target.sum() > 0.0 {
                Some(psnr(&fwd.output, &s.target, config.bin_ms)?)
            } else {
                None
            };
            let report = if report_modes.is_empty() {
                None
            } else {
                let columns = report_modes
                    .iter()
                    .map(|&m| {
                        let trace = if m == net.mode() {
                            fwd.trace.clone()
                        } else {
                            net.with_mode(m).forward_sequence(&s.input, false)?.trace
                        };
                        ModeReport::from_trace(&net.config, &trace)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(ComplexityReport::new(columns))
            };
            Ok(Row {
                rmse: rmse(&fwd.output, &s.target, config.bin_ms)?,
                psnr,
                loss: parts.total,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let psnrs: Vec<f64> = rows.iter().filter_map(|r| r.psnr).collect();
    let reports: Vec<ComplexityReport> = rows.iter().filter_map(|r| r.report.clone()).collect();
    Ok(Evaluation {
        rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
        psnr: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
        loss: rows.iter().map(|r| r.loss).sum::<f64>() / n,
        report: if reports.is_empty() {
            None
        } else {
            Some(mean_report(&net.config, &reports)?)
        },
    })
}

/// Mean RMSE of the nearest-neighbour upsampled low-resolution stream.
pub fn baseline_rmse(samples: &[Sample], config: &TrainConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let errs: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let up = upsample_stream_nearest(&s.pair.lr);
            let pred = rasterize(&up, config.dt_ms, config.steps, Accumulate::Count)?;
            rmse(&pred, &s.target, config.bin_ms)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_every_six_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.1);
        assert!((lr_schedule(6, &cfg) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(24, &cfg) - 1e-5).abs() < 1e-18);
        let drops = (1..cfg.epochs)
            .filter(|&e| lr_schedule(e, &cfg) < lr_schedule(e - 1, &cfg))
            .count();
        assert_eq!(drops, cfg.epochs / 6);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut adam = AdamState::new(1);
        let mut p = [0.0];
        adam.step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        let mut adam = AdamState::new(2);
        let mut p = [1.0, -2.0];
        adam.step(&mut p, &[0.5, 0.5], 0.1).unwrap();
        let (m, v) = (adam.m.clone(), adam.v.clone());
        let before = p;
        adam.step(&mut p, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(p, before);
        assert!(adam.m[0] < m[0] && adam.v[0] < v[0]);
    }

    #[test]
    fn adam_constant_grad_approaches_sign_step() {
        let mut adam = AdamState::new(1);
        let mut p = [0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam.step(&mut p, &[-3.0], 1e-3).unwrap();
            last = p[0] - before;
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut adam = AdamState::new(1);
        assert!(adam.step(&mut [0.0], &[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn lif_encoder_passes_unit_counts() {
        let mut counts = SpikeTensor::zeros(3, 1.0, 2, 1, 1);
        counts.values = vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let spikes = lif_encode(&counts, &LifParams::default()).unwrap();
        assert_eq!(spikes.values, counts.values.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    }
}
