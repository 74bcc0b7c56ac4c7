//! The three-layer super-resolution topology and its three execution modes.
//!
//! ```text
//!   input ──bn──Δ── sdnn_c1 (conv 5×5) ── ΣΔ-ReLU ── dropout ── sdnn_ct (deconv 2×2/2) ── ΣΔ-ReLU ── dropout ──(+)── sdnn_c2 (1×1) ── ΣΔ-ReLU ── Σ ── output
//!     └──────────────────────────────── upsample 2× ─────────────────────────────────────────────────────────────┘
//! ```
//!
//! * `Ann`: every step is an independent dense pass with ReLU units.
//! * `Snn`: LIF neurons after each synapse exchange binary spikes.
//! * `Sdnn`: sigma-delta ReLU neurons exchange quantized activation changes;
//!   the final messages are integrated back into an activation stream.
//!
//! All modes share the same weights, so a checkpoint trained in one mode can
//! be run in another.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Geometry, Polarity, SpikeTensor, POLARITIES};
use crate::layers::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, dropout_mask,
    subtract_channel_mean, upsample2x_backward, upsample2x_nearest, ConvSpec, MeanOnlyBatchNorm,
    Weights,
};
use crate::neurons::{
    surrogate_derivative, LifParams, LifState, SigmaDeltaParams, SigmaDeltaState,
    SurrogateShape,
};
use crate::tensor::Tensor3;

/// Output activation at or above this value becomes an event.
pub const DECODE_THRESHOLD: f64 = 0.5;

/// Half-width of the uniform noise on the initial output projection.
pub const C2_INIT_NOISE: f64 = 0.1;

/// Lower bound applied to trainable sigma-delta thresholds.
pub const MIN_THRESHOLD: f64 = 1e-3;

/// Names used in traces and reports, input layer first.
pub const LAYER_NAMES: [&str; 4] = ["layer-0", "layer-1", "layer-2", "layer-3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ann,
    Snn,
    Sdnn,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sdnn, Mode::Snn, Mode::Ann];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ann => "ann",
            Mode::Snn => "snn",
            Mode::Sdnn => "sdnn",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ann" => Ok(Mode::Ann),
            "snn" => Ok(Mode::Snn),
            "sdnn" => Ok(Mode::Sdnn),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub mode: Mode,
    /// Low-resolution input geometry.
    pub input_height: usize,
    pub input_width: usize,
    pub c1: ConvSpec,
    pub ct: ConvSpec,
    pub c2: ConvSpec,
    /// Sigma-delta neurons (SDNN mode).
    pub sigma_delta: SigmaDeltaParams,
    /// LIF neurons (SNN mode).
    pub lif: LifParams,
    pub lif_surrogate: SurrogateShape,
    /// Dropout rate on the inputs of `sdnn_ct` and `sdnn_c2`.
    pub dropout: f64,
    /// Add the 2× upsampled input ahead of `sdnn_c2`.
    pub skip: bool,
    pub bn_momentum: f64,
    /// Weight initialisation and default dropout seed.
    pub seed: u64,
}

impl NetworkConfig {
    /// The super-resolution topology for a `height × width` two-polarity input.
    pub fn new(mode: Mode, input_height: usize, input_width: usize) -> Self {
        Self {
            mode,
            input_height,
            input_width,
            c1: ConvSpec::conv(POLARITIES, 8, 5, 1, 2),
            ct: ConvSpec::conv_transpose(8, POLARITIES, 2, 2),
            c2: ConvSpec::conv(POLARITIES, POLARITIES, 1, 1, 0),
            sigma_delta: SigmaDeltaParams::default(),
            lif: LifParams::default(),
            lif_surrogate: SurrogateShape {
                tau_grad: 0.5,
                scale_grad: 1.0,
            },
            dropout: 0.1,
            skip: true,
            bn_momentum: 0.1,
            seed: 0,
        }
    }

    /// N-MNIST geometry: 17×17 low-resolution input, 34×34 output.
    pub fn nmnist(mode: Mode) -> Self {
        Self::new(mode, 17, 17)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// `(channels, height, width)` of the input, hidden, upsampled and output maps.
    pub fn shapes(&self) -> Result<[(usize, usize, usize); 4]> {
        self.validate()?;
        let (h0, w0) = (self.input_height, self.input_width);
        let (h1, w1) = self.c1.output_hw(h0, w0)?;
        let (h2, w2) = self.ct.output_hw(h1, w1)?;
        let (h3, w3) = self.c2.output_hw(h2, w2)?;
        Ok([
            (self.c1.in_channels, h0, w0),
            (self.c1.out_channels, h1, w1),
            (self.ct.out_channels, h2, w2),
            (self.c2.out_channels, h3, w3),
        ])
    }

    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        Ok(self.shapes()?[3])
    }

    pub fn validate(&self) -> Result<()> {
        for spec in [&self.c1, &self.ct, &self.c2] {
            spec.validate()?;
        }
        if self.c1.transposed || !self.ct.transposed || self.c2.transposed {
            return Err(Error::invalid("layer kinds must be conv, conv-transpose, conv"));
        }
        if self.c1.out_channels != self.ct.in_channels || self.ct.out_channels != self.c2.in_channels {
            return Err(Error::invalid("layer channel counts do not chain"));
        }
        if self.c2.out_channels != POLARITIES {
            return Err(Error::invalid("output layer must have one channel per polarity"));
        }
        let (h1, w1) = self.c1.output_hw(self.input_height, self.input_width)?;
        let (h2, w2) = self.ct.output_hw(h1, w1)?;
        if self.skip {
            if self.c2.in_channels != self.c1.in_channels {
                return Err(Error::invalid("skip path needs matching input and sdnn_c2 channels"));
            }
            if (h2, w2) != (2 * self.input_height, 2 * self.input_width) {
                return Err(Error::invalid(format!(
                    "skip path needs a 2x upsampling trunk, got {}x{} -> {h2}x{w2}",
                    self.input_height, self.input_width
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("batch-norm momentum not in [0, 1]"));
        }
        self.sigma_delta.validate()?;
        self.lif.validate()?;
        Ok(())
    }
}

/// Learned state: three kernels, four sigma-delta thresholds (input layer
/// first), and the batch-norm running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub c1: Weights,
    pub ct: Weights,
    pub c2: Weights,
    pub thresholds: [f64; 4],
    pub bn: MeanOnlyBatchNorm,
}

/// Per-layer, per-step message counts from one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub name: String,
    /// `(height, width, channels)`.
    pub shape: (usize, usize, usize),
    pub events_per_step: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub mode: Mode,
    pub layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.layers.first().map_or(0, |l| l.events_per_step.len())
    }
}

/// What a neuron layer leaves behind for the backward pass at one step.
#[derive(Debug, Clone)]
struct NeuronCache {
    /// SDNN: sigma accumulator. ANN: pre-activation. SNN: pre-reset membrane.
    pre: Tensor3,
    /// Value the next synapse effectively integrates. SDNN: `delta_ref`;
    /// ANN: ReLU output; SNN: spikes.
    out: Tensor3,
}

#[derive(Debug, Clone)]
struct StepCache {
    /// SDNN input layer: batch-normalised frame and its delta reconstruction.
    bn_out: Option<Tensor3>,
    in1: Tensor3,
    in2: Tensor3,
    in3: Tensor3,
    l1: NeuronCache,
    l2: NeuronCache,
    l3: NeuronCache,
}

/// Activations retained by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    steps: Vec<StepCache>,
    mask1: Tensor3,
    mask2: Tensor3,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// High-resolution activation stream (graded in ANN / SDNN, binary in SNN).
    pub output: SpikeTensor,
    pub trace: Trace,
    pub cache: Option<ForwardCache>,
    /// Per-channel input mean used by batch norm in training mode.
    pub batch_mean: Option<Vec<f64>>,
}

/// Parameter gradients, laid out like [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub c1: Weights,
    pub ct: Weights,
    pub c2: Weights,
    pub thresholds: [f64; 4],
}

impl Gradients {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            c1: Weights::zeros(&config.c1),
            ct: Weights::zeros(&config.ct),
            c2: Weights::zeros(&config.c2),
            thresholds: [0.0; 4],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in [
            (&mut self.c1, &other.c1),
            (&mut self.ct, &other.ct),
            (&mut self.c2, &other.c2),
        ] {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        for (x, y) in self.thresholds.iter_mut().zip(&other.thresholds) {
            *x += y;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in [&mut self.c1, &mut self.ct, &mut self.c2] {
            w.data.iter_mut().for_each(|v| *v *= k);
        }
        self.thresholds.iter_mut().for_each(|v| *v *= k);
    }

    /// Same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.c1.data);
        v.extend_from_slice(&self.ct.data);
        v.extend_from_slice(&self.c2.data);
        v.extend_from_slice(&self.thresholds);
        v
    }
}

/// Mixes `salt` into `seed` so related streams of randomness stay independent.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Bank {
    Relu,
    SigmaDelta(SigmaDeltaState),
    Lif(LifState),
}

impl Bank {
    fn new(mode: Mode, len: usize) -> Self {
        match mode {
            Mode::Ann => Bank::Relu,
            Mode::Sdnn => Bank::SigmaDelta(SigmaDeltaState::new(len)),
            Mode::Snn => Bank::Lif(LifState::new(len)),
        }
    }

    /// Feeds one step of synaptic input; returns `(message, cache)`.
    fn step(&mut self, z: Tensor3, threshold: f64, lif: &LifParams) -> Result<(Tensor3, NeuronCache)> {
        match self {
            Bank::Relu => {
                let out = z.map(|v| v.max(0.0));
                Ok((out.clone(), NeuronCache { pre: z, out }))
            }
            Bank::SigmaDelta(state) => {
                let msg = state.sd_relu_step(threshold, &z.data)?;
                let msg = Tensor3 { data: msg, ..z };
                let pre = Tensor3 {
                    data: state.pre_act.clone(),
                    ..z
                };
                let out = Tensor3 {
                    data: state.delta_ref.clone(),
                    ..z
                };
                Ok((msg, NeuronCache { pre, out }))
            }
            Bank::Lif(state) => {
                let mut spikes = Tensor3::zeros(z.channels, z.height, z.width);
                let mut pre = Tensor3::zeros(z.channels, z.height, z.width);
                state.step_into(lif, &z.data, &mut spikes.data, Some(&mut pre.data))?;
                Ok((spikes.clone(), NeuronCache { pre, out: spikes }))
            }
        }
    }
}

impl Network {
    /// Fresh weights from `config.seed`: Kaiming for `c1` and `ct`, and a
    /// perturbed identity for `c2` so the skip path reaches the output from
    /// the first step instead of dying behind a negative ReLU input.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c1 = Weights::kaiming_uniform(&config.c1, &mut rng);
        let ct = Weights::kaiming_uniform(&config.ct, &mut rng);
        let c2 = Weights::identity_perturbed(&config.c2, C2_INIT_NOISE, &mut rng);
        let th = config.sigma_delta.threshold;
        let bn = MeanOnlyBatchNorm::new(config.c1.in_channels, config.bn_momentum);
        Ok(Self {
            config,
            c1,
            ct,
            c2,
            thresholds: [th; 4],
            bn,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Same parameters, different execution mode.
    pub fn with_mode(&self, mode: Mode) -> Network {
        Network {
            config: self.config.with_mode(mode),
            ..self.clone()
        }
    }

    /// Overrides every sigma-delta threshold.
    pub fn set_thresholds(&mut self, threshold: f64) {
        self.thresholds = [threshold; 4];
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.c1.data);
        v.extend_from_slice(&self.ct.data);
        v.extend_from_slice(&self.c2.data);
        v.extend_from_slice(&self.thresholds);
        v
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let sizes = [self.c1.data.len(), self.ct.data.len(), self.c2.data.len(), 4];
        if params.len() != sizes.iter().sum::<usize>() {
            return Err(Error::shape(format!(
                "{} parameters for a network with {}",
                params.len(),
                sizes.iter().sum::<usize>()
            )));
        }
        let (a, rest) = params.split_at(sizes[0]);
        let (b, rest) = rest.split_at(sizes[1]);
        let (c, d) = rest.split_at(sizes[2]);
        self.c1.data.copy_from_slice(a);
        self.ct.data.copy_from_slice(b);
        self.c2.data.copy_from_slice(c);
        self.thresholds.copy_from_slice(d);
        Ok(())
    }

    /// Runs a whole sequence from reset neuron state. Training mode uses the
    /// sequence's own batch-norm mean, applies dropout seeded from
    /// `config.seed`, and keeps the activations needed by [`Network::backward`].
    pub fn forward_sequence(&self, input: &SpikeTensor, training: bool) -> Result<Forward> {
        self.forward_seeded(input, training, self.config.seed)
    }

    /// [`Network::forward_sequence`] with an explicit dropout seed.
    pub fn forward_seeded(&self, input: &SpikeTensor, training: bool, dropout_seed: u64) -> Result<Forward> {
        let cfg = &self.config;
        let shapes = cfg.shapes()?;
        let (c0, h0, w0) = shapes[0];
        if (input.channels, input.height, input.width) != (c0, h0, w0) {
            return Err(Error::shape(format!(
                "input is {}x{}x{}, network expects {c0}x{h0}x{w0}",
                input.channels, input.height, input.width
            )));
        }
        if input.steps == 0 {
            return Err(Error::Empty("input has no time steps"));
        }
        let mode = cfg.mode;
        let frames: Vec<Tensor3> = (0..input.steps).map(|t| input.frame_tensor(t)).collect();

        let bn_mean = if training {
            Some(self.bn.batch_mean(&frames)?)
        } else {
            None
        };
        let mean = bn_mean.as_deref().unwrap_or(&self.bn.running_mean);

        let rate = if training { cfg.dropout } else { 0.0 };
        let mask1 = dropout_mask(shapes[1], rate, derive_seed(dropout_seed, 1), training)?;
        let mask2 = dropout_mask(shapes[2], rate, derive_seed(dropout_seed, 2), training)?;

        let mut input_delta = SigmaDeltaState::new(c0 * h0 * w0);
        let mut n1 = Bank::new(mode, shapes[1].0 * shapes[1].1 * shapes[1].2);
        let mut n2 = Bank::new(mode, shapes[2].0 * shapes[2].1 * shapes[2].2);
        let mut n3 = Bank::new(mode, shapes[3].0 * shapes[3].1 * shapes[3].2);

        let mut counts: [Vec<usize>; 4] = Default::default();
        let mut out_frames = Vec::with_capacity(input.steps);
        let mut cache_steps = Vec::with_capacity(if training { input.steps } else { 0 });

        for x in frames {
            // input layer
            let (msg0, int0, bn_out) = match mode {
                Mode::Snn => (x.clone(), x.clone(), None),
                Mode::Ann => {
                    let b = subtract_channel_mean(&x, mean);
                    (b.clone(), b, None)
                }
                Mode::Sdnn => {
                    let b = subtract_channel_mean(&x, mean);
                    let m = input_delta.delta_step(self.thresholds[0], &b.data)?;
                    let m = Tensor3 { data: m, ..b };
                    let r = Tensor3 {
                        data: input_delta.delta_ref.clone(),
                        ..b
                    };
                    (m, r, Some(b))
                }
            };
            counts[0].push(x.nonzero_count());

            let z1 = conv2d(&cfg.c1, &self.c1, &msg0)?;
            let (mut msg1, l1) = n1.step(z1, self.thresholds[1], &cfg.lif)?;
            counts[1].push(msg1.nonzero_count());
            msg1.mul_assign(&mask1);

            let z2 = conv_transpose2d(&cfg.ct, &self.ct, &msg1)?;
            let (mut msg2, l2) = n2.step(z2, self.thresholds[2], &cfg.lif)?;
            counts[2].push(msg2.nonzero_count());
            msg2.mul_assign(&mask2);
            if cfg.skip {
                msg2.add_assign(&upsample2x_nearest(&msg0));
            }

            let z3 = conv2d(&cfg.c2, &self.c2, &msg2)?;
            let (msg3, l3) = n3.step(z3, self.thresholds[3], &cfg.lif)?;
            counts[3].push(msg3.nonzero_count());

            out_frames.push(l3.out.clone());

            if training {
                let mut in2 = l1.out.clone();
                in2.mul_assign(&mask1);
                let mut in3 = l2.out.clone();
                in3.mul_assign(&mask2);
                if cfg.skip {
                    in3.add_assign(&upsample2x_nearest(&int0));
                }
                cache_steps.push(StepCache {
                    bn_out,
                    in1: int0,
                    in2,
                    in3,
                    l1,
                    l2,
                    l3,
                });
            }
        }

        let output = SpikeTensor::from_frames(input.dt_ms, &out_frames, mode == Mode::Snn)?;
        let trace = Trace {
            mode,
            layers: counts
                .into_iter()
                .zip(shapes)
                .zip(LAYER_NAMES)
                .map(|((events_per_step, (c, h, w)), name)| LayerTrace {
                    name: name.to_string(),
                    shape: (h, w, c),
                    events_per_step,
                })
                .collect(),
        };
        let cache = training.then(|| ForwardCache {
            mode,
            steps: cache_steps,
            mask1,
            mask2,
        });
        Ok(Forward {
            output,
            trace,
            cache,
            batch_mean: bn_mean,
        })
    }

    /// Backpropagation through time of `grad_output` (∂L/∂output, shaped like
    /// the forward output).
    ///
    /// ReLU gradients are exact indicators. Delta quantizers pass gradients
    /// straight through, which makes the SDNN gradient exact in the
    /// small-threshold limit; thresholds receive `(reconstruction −
    /// activation) / θ`. LIF spikes use the exponential surrogate.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &SpikeTensor) -> Result<Gradients> {
        let cfg = &self.config;
        if cache.mode != cfg.mode {
            return Err(Error::invalid(format!(
                "cache from {} mode used by a {} network",
                cache.mode, cfg.mode
            )));
        }
        let (c3, h3, w3) = cfg.output_shape()?;
        if grad_output.steps != cache.steps.len()
            || (grad_output.channels, grad_output.height, grad_output.width) != (c3, h3, w3)
        {
            return Err(Error::shape("gradient does not match the forward output"));
        }

        let mut grads = Gradients::zeros(cfg);
        let mut carry: [Option<Tensor3>; 3] = [None, None, None];

        for t in (0..cache.steps.len()).rev() {
            let step = &cache.steps[t];
            let g_out = Tensor3 {
                channels: c3,
                height: h3,
                width: w3,
                data: grad_output.frame(t).to_vec(),
            };

            let g_z3 = self.neuron_backward(3, &step.l3, g_out, &mut carry[2], &mut grads)?;
            let (g_in3, gw) = conv2d_backward(&cfg.c2, &self.c2, &step.in3, &g_z3)?;
            add_weights(&mut grads.c2, &gw);

            let mut g_int0 = if cfg.skip {
                Some(upsample2x_backward(&g_in3)?)
            } else {
                None
            };
            let mut g_int2 = g_in3;
            g_int2.mul_assign(&cache.mask2);

            let g_z2 = self.neuron_backward(2, &step.l2, g_int2, &mut carry[1], &mut grads)?;
            let (mut g_int1, gw) = conv_transpose2d_backward(&cfg.ct, &self.ct, &step.in2, &g_z2)?;
            add_weights(&mut grads.ct, &gw);
            g_int1.mul_assign(&cache.mask1);

            let g_z1 = self.neuron_backward(1, &step.l1, g_int1, &mut carry[0], &mut grads)?;
            let (g_in1, gw) = conv2d_backward(&cfg.c1, &self.c1, &step.in1, &g_z1)?;
            add_weights(&mut grads.c1, &gw);

            if let Some(b) = &step.bn_out {
                let g = match g_int0.take() {
                    Some(mut skip) => {
                        skip.add_assign(&g_in1);
                        skip
                    }
                    None => g_in1,
                };
                let th = self.thresholds[0];
                grads.thresholds[0] += g
                    .data
                    .iter()
                    .zip(&step.in1.data)
                    .zip(&b.data)
                    .map(|((g, r), a)| g * (r - a) / th)
                    .sum::<f64>();
            }
        }
        Ok(grads)
    }

    /// Maps ∂L/∂(neuron output) to ∂L/∂(synaptic input) for layer `layer`.
    fn neuron_backward(
        &self,
        layer: usize,
        cache: &NeuronCache,
        g_out: Tensor3,
        carry: &mut Option<Tensor3>,
        grads: &mut Gradients,
    ) -> Result<Tensor3> {
        let mut g = g_out;
        match self.config.mode {
            Mode::Ann => {
                for (gi, u) in g.data.iter_mut().zip(&cache.pre.data) {
                    if *u <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            Mode::Sdnn => {
                let th = self.thresholds[layer];
                let mut g_th = 0.0;
                for ((gi, u), r) in g.data.iter_mut().zip(&cache.pre.data).zip(&cache.out.data) {
                    g_th += *gi * (r - u.max(0.0)) / th;
                    if *u <= 0.0 {
                        *gi = 0.0;
                    }
                }
                grads.thresholds[layer] += g_th;
            }
            Mode::Snn => {
                let lif = &self.config.lif;
                let sur = &self.config.lif_surrogate;
                let keep = 1.0 - lif.decay;
                for i in 0..g.data.len() {
                    let y = cache.pre.data[i];
                    let s = cache.out.data[i];
                    let mut gy = g.data[i] * surrogate_derivative(y, lif.threshold, sur.tau_grad, sur.scale_grad);
                    if let Some(c) = carry.as_ref() {
                        gy += c.data[i] * (1.0 - s);
                    }
                    g.data[i] = gy;
                }
                *carry = Some(g.map(|v| v * keep));
            }
        }
        Ok(g)
    }
}

fn add_weights(acc: &mut Weights, delta: &Weights) {
    for (a, d) in acc.data.iter_mut().zip(&delta.data) {
        *a += d;
    }
}

/// Turns an output activation stream into events: one event per cell and
/// step whose value reaches [`DECODE_THRESHOLD`], stamped at the step start.
pub fn decode_events(output: &SpikeTensor, duration_us: u64) -> Result<EventStream> {
    if output.channels != POLARITIES {
        return Err(Error::shape(format!(
            "decoding needs {POLARITIES} channels, got {}",
            output.channels
        )));
    }
    let (h, w) = (output.height, output.width);
    let mut events = Vec::new();
    for step in 0..output.steps {
        let t = (step as f64 * output.dt_ms * 1000.0).round() as u64;
        if t >= duration_us {
            break;
        }
        for (cell, &v) in output.frame(step).iter().enumerate() {
            if v >= DECODE_THRESHOLD {
                let p = if cell / (h * w) == 0 {
                    Polarity::Off
                } else {
                    Polarity::On
                };
                let rem = cell % (h * w);
                events.push(Event::new(t, (rem % w) as u16, (rem / w) as u16, p));
            }
        }
    }
    EventStream::new(Geometry::new(w as u32, h as u32, duration_us), events)
}

/// Rounds a network-side threshold update back into the admissible range.
pub fn clamp_thresholds(net: &mut Network) {
    for th in &mut net.thresholds {
        *th = th.max(MIN_THRESHOLD);
    }
}
