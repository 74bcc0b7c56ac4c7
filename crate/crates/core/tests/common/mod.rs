#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdsr::events::SpikeTensor;
use sdsr::network::{Mode, Network, NetworkConfig};
use sdsr::objective::{loss_and_grad, LossWeights};

pub const FD_EPS: f64 = 1e-3;

/// Seed of the frozen micro network. Its ReLU pre-activations stay more
/// than `FD_EPS` away from zero, so central differences never straddle a kink.
pub const MICRO_SEED: u64 = 3;

/// 4x4 input, 2 steps, random binary input and target.
pub fn micro(mode: Mode, seed: u64, theta: f64) -> (Network, SpikeTensor, SpikeTensor) {
    let mut cfg = NetworkConfig::new(mode, 4, 4);
    cfg.seed = seed;
    cfg.sigma_delta.threshold = theta;
    let net = Network::build(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut input = SpikeTensor::zeros(2, 1.0, 2, 4, 4);
    for v in &mut input.values {
        *v = if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 };
    }
    let mut target = SpikeTensor::zeros(2, 1.0, 2, 8, 8);
    for v in &mut target.values {
        *v = if rng.gen::<f64>() < 0.2 { 1.0 } else { 0.0 };
    }
    (net, input, target)
}

fn loss(net: &Network, input: &SpikeTensor, target: &SpikeTensor) -> f64 {
    let f = net.forward_seeded(input, true, 5).unwrap();
    loss_and_grad(&f.output, target, &LossWeights::default(), 50.0)
        .unwrap()
        .0
        .total
}

pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// Largest elementwise |a - n| / max(|a|, |n|).
    pub fn max_rel(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }

    /// max |a - n| over max |n|.
    pub fn normwise_rel(&self) -> f64 {
        let diff = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = self.numeric.iter().map(|n| n.abs()).fold(0.0, f64::max);
        diff / scale
    }
}

/// Central differences over every conv weight (thresholds excluded).
pub fn grad_check(mode: Mode, seed: u64, theta: f64) -> GradCheck {
    let (net, input, target) = micro(mode, seed, theta);
    let f = net.forward_seeded(&input, true, 5).unwrap();
    let (_, g) = loss_and_grad(&f.output, &target, &LossWeights::default(), 50.0).unwrap();
    let flat = net.backward(f.cache.as_ref().unwrap(), &g).unwrap().flat();
    let params = net.flat_params();
    let n_weights = params.len() - 4;
    let mut numeric = Vec::with_capacity(n_weights);
    let mut probe = net.clone();
    for i in 0..n_weights {
        let mut p = params.clone();
        p[i] += FD_EPS;
        probe.set_flat_params(&p).unwrap();
        let up = loss(&probe, &input, &target);
        p[i] -= 2.0 * FD_EPS;
        probe.set_flat_params(&p).unwrap();
        let down = loss(&probe, &input, &target);
        numeric.push((up - down) / (2.0 * FD_EPS));
    }
    GradCheck {
        analytic: flat[..n_weights].to_vec(),
        numeric,
    }
}
