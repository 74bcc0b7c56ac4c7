//! Deterministic moving-bar scenes rendered through a simple DVS pixel model.
//!
//! A bar with linear intensity ramps on both edges sweeps across the sensor
//! along one axis. Every millisecond each pixel compares its intensity with
//! the level at its last event and fires once the difference reaches the
//! contrast threshold, so a passing edge leaves a short burst of events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, EventStream, Geometry, Polarity};
use crate::error::{Error, Result};

/// Width in pixels of each intensity ramp.
const EDGE_RAMP_PX: f64 = 2.0;
/// Intensity change (on a 0..1 scale) that triggers one event.
const CONTRAST: f64 = 0.1;
const THICKNESS_PX: std::ops::RangeInclusive<u32> = 3..=6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityMode {
    /// Bright bar on dark background: ON at the leading edge, OFF at the trailing edge.
    Light,
    /// Dark bar: OFF leading, ON trailing.
    Dark,
    /// Chosen per stream from the seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingBar {
    pub width: u32,
    pub height: u32,
    pub speed_px_per_ms: f64,
    pub duration_ms: f64,
    pub polarity: PolarityMode,
    pub seed: u64,
}

#[derive(Clone, Copy)]
enum Axis {
    Horizontal,
    Vertical,
}

pub fn synth_moving_bar(bar: &MovingBar) -> Result<EventStream> {
    if bar.width < 4 || bar.height < 4 {
        return Err(Error::invalid(format!(
            "moving bar needs at least 4x4 pixels, got {}x{}",
            bar.width, bar.height
        )));
    }
    if !(bar.speed_px_per_ms >= 0.0) || !bar.speed_px_per_ms.is_finite() {
        return Err(Error::invalid("speed must be finite and non-negative"));
    }
    if !(bar.duration_ms > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(bar.seed);
    let axis = if rng.gen_bool(0.5) {
        Axis::Horizontal
    } else {
        Axis::Vertical
    };
    let forward = rng.gen_bool(0.5);
    let thickness = f64::from(rng.gen_range(THICKNESS_PX));
    let (along, across) = match axis {
        Axis::Horizontal => (bar.width, bar.height),
        Axis::Vertical => (bar.height, bar.width),
    };
    let start = rng.gen_range(0.0..f64::from(along) / 3.0);
    let phase_us: u64 = rng.gen_range(0..1000);
    let light = match bar.polarity {
        PolarityMode::Light => true,
        PolarityMode::Dark => false,
        PolarityMode::Random => rng.gen_bool(0.5),
    };

    let duration_us = (bar.duration_ms * 1000.0).round() as u64;
    let geometry = Geometry::new(bar.width, bar.height, duration_us);
    if bar.speed_px_per_ms == 0.0 {
        return Ok(EventStream::empty(geometry));
    }

    let intensity = |s: u32, t_ms: f64| -> f64 {
        let lead = start + bar.speed_px_per_ms * t_ms;
        let d = lead - (f64::from(s) + 0.5);
        let ramp = |z: f64| (z / EDGE_RAMP_PX).clamp(0.0, 1.0);
        let level = ramp(d) - ramp(d - thickness);
        if light {
            level
        } else {
            1.0 - level
        }
    };

    let mut reference: Vec<f64> = (0..along)
        .map(|s| intensity(s, phase_us as f64 / 1000.0))
        .collect();
    let mut events = Vec::new();
    for tick in 1u64.. {
        let t_us = tick * 1000 + phase_us;
        if t_us >= duration_us {
            break;
        }
        let t_ms = t_us as f64 / 1000.0;
        for s in 0..along {
            let level = intensity(s, t_ms);
            let diff = level - reference[s as usize];
            let crossings = (diff.abs() / CONTRAST + 1e-9).floor();
            if crossings < 1.0 {
                continue;
            }
            reference[s as usize] += diff.signum() * crossings * CONTRAST;
            let p = if diff > 0.0 { Polarity::On } else { Polarity::Off };
            let coord = if forward { s } else { along - 1 - s } as u16;
            for other in 0..across as u16 {
                let (x, y) = match axis {
                    Axis::Horizontal => (coord, other),
                    Axis::Vertical => (other, coord),
                };
                events.push(Event::new(t_us, x, y, p));
            }
        }
    }
    EventStream::new(geometry, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::downsample_stream;

    fn bar(seed: u64, speed: f64) -> MovingBar {
        MovingBar {
            width: 32,
            height: 32,
            speed_px_per_ms: speed,
            duration_ms: 100.0,
            polarity: PolarityMode::Light,
            seed,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            synth_moving_bar(&bar(7, 0.25)).unwrap(),
            synth_moving_bar(&bar(7, 0.25)).unwrap()
        );
        assert_ne!(
            synth_moving_bar(&bar(7, 0.25)).unwrap(),
            synth_moving_bar(&bar(8, 0.25)).unwrap()
        );
    }

    #[test]
    fn zero_speed_is_silent() {
        assert!(synth_moving_bar(&bar(3, 0.0)).unwrap().is_empty());
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let mut b = bar(0, 0.25);
        b.width = 3;
        assert!(synth_moving_bar(&b).is_err());
    }

    #[test]
    fn light_bar_leads_with_on_events() {
        use std::collections::HashMap;
        for seed in 0..8 {
            let s = synth_moving_bar(&bar(seed, 0.25)).unwrap();
            assert!(!s.is_empty());
            let mut first: HashMap<(u16, u16, Polarity), u64> = HashMap::new();
            for e in s.events() {
                first.entry((e.x, e.y, e.p)).or_insert(e.t);
            }
            let mut both = 0;
            for (&(x, y, p), &t_on) in &first {
                if p != Polarity::On {
                    continue;
                }
                if let Some(&t_off) = first.get(&(x, y, Polarity::Off)) {
                    both += 1;
                    assert!(t_on < t_off, "seed {seed}: pixel ({x},{y})");
                }
            }
            assert!(both > 0, "seed {seed}");
        }
    }

    #[test]
    fn downsampled_pair_is_nonempty() {
        let hr = synth_moving_bar(&bar(11, 0.25)).unwrap();
        let lr = downsample_stream(&hr).unwrap();
        assert_eq!((lr.width, lr.height), (16, 16));
        assert!(!lr.is_empty() && lr.len() < hr.len());
    }
}
