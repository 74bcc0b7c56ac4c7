//! Neuron mechanisms: the LIF spike encoder, the sigma (temporal integration)
//! and delta (temporal difference + quantization) units, and the surrogate
//! derivative used to train through spikes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leaky integrate-and-fire parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Fraction of the membrane lost per step, in `[0, 1]`.
    pub decay: f64,
    /// Firing threshold, `> 0`.
    pub threshold: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            decay: 0.1,
            threshold: 1.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::invalid(format!("LIF decay {} not in [0, 1]", self.decay)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid(format!(
                "LIF threshold {} must be positive",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub membrane: Vec<f64>,
}

impl LifState {
    pub fn new(len: usize) -> Self {
        Self {
            membrane: vec![0.0; len],
        }
    }

    pub fn reset(&mut self) {
        self.membrane.fill(0.0);
    }

    /// One step: leak and integrate, fire at threshold, reset fired neurons to 0.
    pub fn step(&mut self, params: &LifParams, input: &[f64]) -> Result<Vec<f64>> {
        let mut spikes = vec![0.0; input.len()];
        self.step_into(params, input, &mut spikes, None)?;
        Ok(spikes)
    }

    /// Like [`LifState::step`], writing spikes into `spikes` and, when given,
    /// the pre-reset membrane into `pre_reset`.
    pub fn step_into(
        &mut self,
        params: &LifParams,
        input: &[f64],
        spikes: &mut [f64],
        mut pre_reset: Option<&mut [f64]>,
    ) -> Result<()> {
        if input.len() != self.membrane.len() || spikes.len() != input.len() {
            return Err(Error::shape(format!(
                "LIF input of {} for {} neurons",
                input.len(),
                self.membrane.len()
            )));
        }
        let keep = 1.0 - params.decay;
        for i in 0..input.len() {
            let y = keep * self.membrane[i] + input[i];
            if let Some(pre) = pre_reset.as_deref_mut() {
                pre[i] = y;
            }
            let s = if y >= params.threshold { 1.0 } else { 0.0 };
            spikes[i] = s;
            self.membrane[i] = y * (1.0 - s);
        }
        Ok(())
    }
}

/// Shape of the surrogate spike derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateShape {
    pub tau_grad: f64,
    pub scale_grad: f64,
}

/// Parameters of a sigma-delta layer. The threshold is the quantization step
/// of the delta unit and is shared by the whole layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaDeltaParams {
    pub threshold: f64,
    pub tau_grad: f64,
    pub scale_grad: f64,
}

impl Default for SigmaDeltaParams {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            tau_grad: 0.05,
            scale_grad: 2.0,
        }
    }
}

impl SigmaDeltaParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("threshold", self.threshold),
            ("tau_grad", self.tau_grad),
            ("scale_grad", self.scale_grad),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("sigma-delta {name} {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-neuron sigma-delta memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDeltaState {
    /// Running sum of incoming messages.
    pub sigma_acc: Vec<f64>,
    /// Reconstruction the downstream layer holds: sum of everything sent so far.
    pub delta_ref: Vec<f64>,
    /// Pre-activation seen at the last `sd_relu_step`.
    pub pre_act: Vec<f64>,
}

impl SigmaDeltaState {
    pub fn new(len: usize) -> Self {
        Self {
            sigma_acc: vec![0.0; len],
            delta_ref: vec![0.0; len],
            pre_act: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.sigma_acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_acc.is_empty()
    }

    pub fn reset(&mut self) {
        self.sigma_acc.fill(0.0);
        self.delta_ref.fill(0.0);
        self.pre_act.fill(0.0);
    }

    /// Temporal difference against the last transmitted value, quantized to
    /// multiples of `threshold`. The residual stays in `delta_ref` so the
    /// reconstruction never drifts more than `threshold / 2` at rest.
    pub fn delta_step(&mut self, threshold: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut out = vec![0.0; x.len()];
        for ((o, r), &xi) in out.iter_mut().zip(self.delta_ref.iter_mut()).zip(x) {
            *o = quantize(xi - *r, threshold);
            *r += *o;
        }
        Ok(out)
    }

    /// Temporal integration: `sigma_acc += y`.
    pub fn sigma_step(&mut self, y: &[f64]) -> Result<&[f64]> {
        self.check(y.len())?;
        for (a, v) in self.sigma_acc.iter_mut().zip(y) {
            *a += v;
        }
        Ok(&self.sigma_acc)
    }

    /// Σ → ReLU → Δ. Zero input change yields zero output.
    pub fn sd_relu_step(&mut self, threshold: f64, msg_in: &[f64]) -> Result<Vec<f64>> {
        self.check(msg_in.len())?;
        let mut out = vec![0.0; msg_in.len()];
        for i in 0..msg_in.len() {
            let u = self.sigma_acc[i] + msg_in[i];
            self.sigma_acc[i] = u;
            self.pre_act[i] = u;
            let m = quantize(u.max(0.0) - self.delta_ref[i], threshold);
            self.delta_ref[i] += m;
            out[i] = m;
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::shape(format!(
                "sigma-delta input of {len} for {} neurons",
                self.len()
            )));
        }
        Ok(())
    }
}

/// `threshold · round(e / threshold)` with ties away from zero.
#[inline]
pub fn quantize(e: f64, threshold: f64) -> f64 {
    threshold * (e / threshold).round()
}

/// Exponential bump of height `scale_grad` centred on the threshold, with
/// width `tau_grad · threshold`.
#[inline]
pub fn surrogate_derivative(u: f64, threshold: f64, tau_grad: f64, scale_grad: f64) -> f64 {
    scale_grad * (-(u - threshold).abs() / (tau_grad * threshold)).exp()
}

pub fn surrogate_derivative_slice(
    u: &[f64],
    threshold: f64,
    tau_grad: f64,
    scale_grad: f64,
) -> Vec<f64> {
    u.iter()
        .map(|&v| surrogate_derivative(v, threshold, tau_grad, scale_grad))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lif_integrates_then_fires_and_resets() {
        let p = LifParams {
            decay: 0.0,
            threshold: 1.0,
        };
        let mut s = LifState::new(1);
        assert_eq!(s.step(&p, &[0.6]).unwrap(), vec![0.0]);
        assert_eq!(s.step(&p, &[0.6]).unwrap(), vec![1.0]);
        assert_eq!(s.membrane, vec![0.0]);
    }

    #[test]
    fn lif_silent_without_input() {
        for decay in [0.0, 0.3, 1.0] {
            let p = LifParams {
                decay,
                threshold: 1.0,
            };
            let mut s = LifState::new(3);
            for _ in 0..50 {
                assert_eq!(s.step(&p, &[0.0; 3]).unwrap(), vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn lif_matches_hand_iteration() {
        // decay 0.5, threshold 1, x = 0.8: 0.8, 1.2 -> fire, 0.8, 1.2 -> fire ...
        let p = LifParams {
            decay: 0.5,
            threshold: 1.0,
        };
        let mut s = LifState::new(1);
        let mut y: f64 = 0.0;
        for _ in 0..20 {
            y = 0.5 * y + 0.8;
            let fire = y >= 1.0;
            let spikes = s.step(&p, &[0.8]).unwrap();
            assert_eq!(spikes[0] == 1.0, fire);
            if fire {
                y = 0.0;
            }
            assert!((s.membrane[0] - y).abs() < 1e-15);
        }
    }

    #[test]
    fn lif_rejects_shape_mismatch() {
        let mut s = LifState::new(2);
        assert!(s.step(&LifParams::default(), &[1.0]).is_err());
        assert!(LifParams {
            decay: 1.5,
            threshold: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn delta_constant_input_sends_once() {
        let mut s = SigmaDeltaState::new(1);
        assert_eq!(s.delta_step(1.0, &[2.7]).unwrap(), vec![3.0]);
        for _ in 0..10 {
            assert_eq!(s.delta_step(1.0, &[2.7]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn delta_ramp_carries_residual() {
        let mut s = SigmaDeltaState::new(1);
        let outs: Vec<f64> = [0.0, 0.4, 0.8, 1.2]
            .iter()
            .map(|x| s.delta_step(1.0, &[*x]).unwrap()[0])
            .collect();
        assert_eq!(outs, vec![0.0, 0.0, 1.0, 0.0]);
        // residual after the ramp is 0.2 <= 0.5
        assert!((1.2 - s.delta_ref[0]).abs() <= 0.5);
    }

    #[test]
    fn delta_rounds_half_away_from_zero() {
        // e = 0.75 at threshold 0.5 -> round(1.5) = 2 -> 1.0 (overshoot), corrected next step
        let mut s = SigmaDeltaState::new(1);
        assert_eq!(s.delta_step(0.5, &[0.75]).unwrap(), vec![1.0]);
        assert_eq!(s.delta_step(0.5, &[0.75]).unwrap(), vec![-0.5]);
        assert_eq!(s.delta_ref, vec![0.5]);
        assert_eq!(quantize(-0.25, 0.5), -0.5);
    }

    #[test]
    fn sigma_telescopes() {
        let mut s = SigmaDeltaState::new(2);
        s.sigma_step(&[1.0, 2.0]).unwrap();
        assert_eq!(s.sigma_step(&[-1.0, -2.0]).unwrap(), &[0.0, 0.0]);
        assert_eq!(s.sigma_step(&[0.0, 0.0]).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn sd_relu_step_input_single_message() {
        let mut s = SigmaDeltaState::new(1);
        assert_eq!(s.sd_relu_step(1.0, &[3.0]).unwrap(), vec![3.0]);
        for _ in 0..5 {
            assert_eq!(s.sd_relu_step(1.0, &[0.0]).unwrap(), vec![0.0]);
        }
        assert_eq!(s.pre_act, vec![3.0]);
    }

    #[test]
    fn sd_relu_silent_at_rest_and_below_zero() {
        let mut s = SigmaDeltaState::new(2);
        for _ in 0..10 {
            assert_eq!(s.sd_relu_step(1.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
        assert_eq!(s.sd_relu_step(1.0, &[-4.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn surrogate_shape() {
        assert_eq!(surrogate_derivative(1.0, 1.0, 0.05, 2.0), 2.0);
        assert!(surrogate_derivative(50.0, 1.0, 0.05, 2.0) < 1e-12);
        assert!(surrogate_derivative(-50.0, 1.0, 0.05, 2.0) < 1e-12);
        for d in [0.01, 0.1, 0.7] {
            let a = surrogate_derivative(1.0 + d, 1.0, 0.05, 2.0);
            let b = surrogate_derivative(1.0 - d, 1.0, 0.05, 2.0);
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(surrogate_derivative_slice(&[0.5, 0.5], 0.5, 0.1, 3.0), vec![3.0, 3.0]);
    }

    #[test]
    fn params_validation() {
        assert!(SigmaDeltaParams::default().validate().is_ok());
        assert!(SigmaDeltaParams {
            threshold: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
