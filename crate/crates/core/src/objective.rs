//! Training losses and evaluation metrics.
//!
//! * temporal loss: `½ Σ_i Σ_t (E_i(t) − Ê_i(t))² · dt`
//! * spatial loss: `½ Σ (Φ − Φ̂)²` over every PSTH bin, pixel and polarity
//! * total loss: `α · temporal + β · spatial`
//! * RMSE and PSNR on PSTH counts

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{psth, Psth, PsthSource, SpikeTensor};

/// PSTH bin width used by the spatial loss and the metrics.
pub const DEFAULT_BIN_MS: f64 = 50.0;

/// Reported PSNR for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::invalid("loss weights cannot both be zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub temporal: f64,
    pub spatial: f64,
    pub total: f64,
}

fn check_layout(pred: &SpikeTensor, target: &SpikeTensor) -> Result<()> {
    if !pred.same_layout(target) {
        return Err(Error::shape(format!(
            "prediction {}x{}x{}x{} @ {} ms vs target {}x{}x{}x{} @ {} ms",
            pred.steps,
            pred.channels,
            pred.height,
            pred.width,
            pred.dt_ms,
            target.steps,
            target.channels,
            target.height,
            target.width,
            target.dt_ms
        )));
    }
    Ok(())
}

pub fn temporal_loss(pred: &SpikeTensor, target: &SpikeTensor) -> Result<f64> {
    check_layout(pred, target)?;
    let sq: f64 = pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * sq * pred.dt_ms)
}

fn paired_psth<S: PsthSource + ?Sized>(pred: &S, target: &S, bin_ms: f64) -> Result<(Psth, Psth)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(format!(
            "geometry {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (hp, ht) = (pred.horizon_ms(), target.horizon_ms());
    if (hp - ht).abs() > 1e-9 {
        return Err(Error::shape(format!("horizon {hp} ms vs {ht} ms")));
    }
    Ok((psth(pred, bin_ms, (0.0, ht))?, psth(target, bin_ms, (0.0, ht))?))
}

pub fn spatial_loss<S: PsthSource + ?Sized>(pred: &S, target: &S, bin_ms: f64) -> Result<f64> {
    let (a, b) = paired_psth(pred, target, bin_ms)?;
    Ok(0.5 * squared_error(&a, &b))
}

fn squared_error(a: &Psth, b: &Psth) -> f64 {
    a.counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

pub fn total_loss(weights: &LossWeights, temporal: f64, spatial: f64) -> f64 {
    weights.alpha * temporal + weights.beta * spatial
}

/// All three losses plus `∂L/∂pred` for a tensor prediction.
pub fn loss_and_grad(
    pred: &SpikeTensor,
    target: &SpikeTensor,
    weights: &LossWeights,
    bin_ms: f64,
) -> Result<(LossParts, SpikeTensor)> {
    check_layout(pred, target)?;
    let temporal = temporal_loss(pred, target)?;
    let (pp, pt) = paired_psth(pred, target, bin_ms)?;
    let spatial = 0.5 * squared_error(&pp, &pt);
    let total = total_loss(weights, temporal, spatial);

    let mut grad = pred.clone();
    grad.binary = false;
    let bins = pp.step_bins(pred.steps, pred.dt_ms);
    let n = pred.frame_len();
    for (step, bin) in bins.into_iter().enumerate() {
        let g = grad.frame_mut(step);
        let (p, t) = (&pred.values[step * n..(step + 1) * n], &target.values[step * n..(step + 1) * n]);
        for i in 0..n {
            let mut d = weights.alpha * (p[i] - t[i]) * pred.dt_ms;
            if let Some(b) = bin {
                d += weights.beta * (pp.bin(b)[i] - pt.bin(b)[i]);
            }
            g[i] = d;
        }
    }
    Ok((
        LossParts {
            temporal,
            spatial,
            total,
        },
        grad,
    ))
}

/// Root-mean-square PSTH count error over every bin, polarity and pixel.
pub fn rmse<S: PsthSource + ?Sized>(pred: &S, target: &S, bin_ms: f64) -> Result<f64> {
    let (a, b) = paired_psth(pred, target, bin_ms)?;
    Ok((squared_error(&a, &b) / a.counts.len() as f64).sqrt())
}

/// `10 · log10(peak² / MSE)` on PSTH counts, with the peak taken from the
/// target. Perfect matches report [`PSNR_CAP_DB`].
pub fn psnr<S: PsthSource + ?Sized>(pred: &S, target: &S, bin_ms: f64) -> Result<f64> {
    let (a, b) = paired_psth(pred, target, bin_ms)?;
    let peak = b.counts.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::invalid("PSNR undefined for an all-zero target"));
    }
    let mse = squared_error(&a, &b) / a.counts.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventStream, Geometry, Polarity};

    fn tensor(steps: usize, values: &[(usize, usize, f64)]) -> SpikeTensor {
        let mut t = SpikeTensor::zeros(steps, 1.0, 2, 2, 2);
        for &(s, i, v) in values {
            t.frame_mut(s)[i] = v;
        }
        t
    }

    #[test]
    fn temporal_basics() {
        let a = tensor(4, &[(1, 3, 1.0)]);
        assert_eq!(temporal_loss(&a, &a).unwrap(), 0.0);
        let b = tensor(4, &[]);
        assert_eq!(temporal_loss(&a, &b).unwrap(), 0.5);
        let mut c = b.clone();
        c.dt_ms = 2.0;
        assert!(temporal_loss(&a, &c).is_err());
    }

    #[test]
    fn spatial_basics() {
        let a = tensor(100, &[(3, 0, 1.0)]);
        let b = tensor(100, &[]);
        assert_eq!(spatial_loss(&a, &a, 50.0).unwrap(), 0.0);
        assert_eq!(spatial_loss(&a, &b, 50.0).unwrap(), 0.5);
        // moving the event inside its bin changes nothing spatially
        let moved = tensor(100, &[(40, 0, 1.0)]);
        assert_eq!(spatial_loss(&a, &moved, 50.0).unwrap(), 0.0);
        assert!(temporal_loss(&a, &moved).unwrap() > 0.0);
    }

    #[test]
    fn total_combines_linearly() {
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.0,
        };
        assert_eq!(total_loss(&w, 0.3, 7.0), 0.3);
        let w = LossWeights {
            alpha: 0.0,
            beta: 1.0,
        };
        assert_eq!(total_loss(&w, 0.3, 7.0), 7.0);
        assert_eq!(total_loss(&LossWeights::default(), 0.5, 0.5), 1.0);
        assert!(LossWeights {
            alpha: 0.0,
            beta: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rmse_and_psnr_reference_points() {
        let g = Geometry::new(2, 2, 100_000);
        let all = |n: u64| {
            let mut ev = Vec::new();
            for k in 0..n {
                for y in 0..2 {
                    for x in 0..2 {
                        for p in [Polarity::Off, Polarity::On] {
                            ev.push(Event::new(k * 10, x, y, p));
                        }
                    }
                }
            }
            EventStream::new(g, ev).unwrap()
        };
        let one = all(1);
        let two = all(2);
        assert_eq!(rmse(&one, &one, 50.0).unwrap(), 0.0);
        // bin 0 off by one everywhere, bin 1 empty in both
        let r = rmse(&two, &one, 50.0).unwrap();
        assert!((r - (0.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(psnr(&one, &one, 50.0).unwrap(), PSNR_CAP_DB);
        // empty prediction vs peak-1 target: MSE = 0.5 -> 10 log10(2)
        let empty = EventStream::empty(g);
        let p = psnr(&empty, &one, 50.0).unwrap();
        assert!((p - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!(psnr(&one, &empty, 50.0).is_err());
    }

    #[test]
    fn uniform_off_by_one_rmse_is_one() {
        let a = tensor(100, &[]);
        let mut b = a.clone();
        // one extra count per cell in each 50 ms bin
        for cell in 0..8 {
            b.frame_mut(0)[cell] = 1.0;
            b.frame_mut(50)[cell] = 1.0;
        }
        assert_eq!(rmse(&b, &a, 50.0).unwrap(), 1.0);
    }

    #[test]
    fn psnr_zero_db_when_mse_equals_peak_squared() {
        let target = tensor(50, &[(0, 0, 1.0)]);
        let mut pred = tensor(50, &[]);
        // errors of 1 on every cell -> MSE 1 = peak²
        for cell in 0..8 {
            pred.frame_mut(0)[cell] = if cell == 0 { 0.0 } else { 1.0 };
        }
        assert!(psnr(&pred, &target, 50.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let target = tensor(60, &[(3, 1, 1.0), (55, 6, 2.0)]);
        let mut pred = tensor(60, &[(3, 1, 0.4), (10, 2, 0.7), (59, 6, 1.1)]);
        let w = LossWeights {
            alpha: 0.7,
            beta: 1.3,
        };
        let (_, grad) = loss_and_grad(&pred, &target, &w, 50.0).unwrap();
        for idx in [8 * 3 + 1, 8 * 10 + 2, 8 * 59 + 6, 8 * 20 + 5] {
            let eps = 1e-6;
            pred.values[idx] += eps;
            let up = loss_and_grad(&pred, &target, &w, 50.0).unwrap().0.total;
            pred.values[idx] -= 2.0 * eps;
            let down = loss_and_grad(&pred, &target, &w, 50.0).unwrap().0.total;
            pred.values[idx] += eps;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grad.values[idx]).abs() < 1e-6, "{idx}: {fd} vs {}", grad.values[idx]);
        }
    }
}
