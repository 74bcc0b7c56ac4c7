//! Event-stream data model and the operations that feed the network.
//!
//! Timestamps are integer microseconds everywhere. Simulation step sizes and
//! PSTH bin widths are given in milliseconds and converted with `× 1000`.

mod nmnist;
mod pgm;
mod raster;
mod synth;
mod text;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nmnist::{decode_nmnist_bin, NMNIST_SIZE};
pub use pgm::{render_frame, write_pgm, Frame};
pub use raster::{psth, rasterize, Accumulate, Psth, PsthSource, SpikeTensor};
pub use synth::{synth_moving_bar, MovingBar, PolarityMode};
pub use text::{parse_text_events, write_text_events};

/// Number of polarity channels (OFF, ON).
pub const POLARITIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(bit: u64) -> Result<Self> {
        match bit {
            0 => Ok(Polarity::Off),
            1 => Ok(Polarity::On),
            other => Err(Error::Polarity(other)),
        }
    }

    #[inline]
    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Off => Polarity::On,
            Polarity::On => Polarity::Off,
        }
    }
}

/// One address event: a brightness change at pixel `(x, y)` at time `t` (µs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }

    #[inline]
    fn sort_key(&self) -> (u64, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.p)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sensor geometry and recording horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
    /// Microseconds; every event satisfies `t < duration`.
    pub duration: u64,
}

impl Geometry {
    pub fn new(width: u32, height: u32, duration: u64) -> Self {
        Self {
            width,
            height,
            duration,
        }
    }
}

/// A time-ordered event sequence with its geometry. Ties in `t` are broken by
/// `(y, x, p)`, so equal multisets always produce equal streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub duration: u64,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates and sorts `events`.
    pub fn new(geometry: Geometry, mut events: Vec<Event>) -> Result<Self> {
        for e in &events {
            check_event(e, &geometry)?;
        }
        events.sort_unstable();
        Ok(Self {
            width: geometry.width,
            height: geometry.height,
            duration: geometry.duration,
            events,
        })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            width: geometry.width,
            height: geometry.height,
            duration: geometry.duration,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.width, self.height, self.duration)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

fn check_event(e: &Event, g: &Geometry) -> Result<()> {
    if u32::from(e.x) >= g.width || u32::from(e.y) >= g.height {
        return Err(Error::OutOfGeometry {
            x: e.x.into(),
            y: e.y.into(),
            width: g.width,
            height: g.height,
        });
    }
    if e.t >= g.duration {
        return Err(Error::OutOfHorizon {
            t: e.t,
            duration: g.duration,
        });
    }
    Ok(())
}

/// Halves the resolution by merging each 2×2 pixel block (stride 2).
///
/// Events that land on the same `(t, x, y, p)` after the coordinate mapping
/// collapse into a single event.
pub fn downsample_stream(hr: &EventStream) -> Result<EventStream> {
    if hr.width % 2 != 0 || hr.height % 2 != 0 {
        return Err(Error::invalid(format!(
            "downsampling needs even geometry, got {}x{}",
            hr.width, hr.height
        )));
    }
    let mut events: Vec<Event> = hr
        .events
        .iter()
        .map(|e| Event::new(e.t, e.x / 2, e.y / 2, e.p))
        .collect();
    events.sort_unstable();
    events.dedup();
    Ok(EventStream {
        width: hr.width / 2,
        height: hr.height / 2,
        duration: hr.duration,
        events,
    })
}

/// Nearest-neighbour 2× upsampling of a stream: every event is replicated
/// into the four pixels of its block. Used as the trivial baseline.
pub fn upsample_stream_nearest(lr: &EventStream) -> EventStream {
    let mut events = Vec::with_capacity(lr.events.len() * 4);
    for e in &lr.events {
        for dy in 0..2 {
            for dx in 0..2 {
                events.push(Event::new(e.t, e.x * 2 + dx, e.y * 2 + dy, e.p));
            }
        }
    }
    events.sort_unstable();
    EventStream {
        width: lr.width * 2,
        height: lr.height * 2,
        duration: lr.duration,
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: u64) -> Event {
        Event::new(t, x, y, Polarity::from_bit(p).unwrap())
    }

    #[test]
    fn downsample_maps_by_floor_division() {
        let hr = EventStream::new(Geometry::new(8, 8, 100), vec![ev(7, 5, 7, 1)]).unwrap();
        let lr = downsample_stream(&hr).unwrap();
        assert_eq!((lr.width, lr.height), (4, 4));
        assert_eq!(lr.events(), &[ev(7, 2, 3, 1)]);
    }

    #[test]
    fn downsample_merges_block_duplicates() {
        let hr = EventStream::new(
            Geometry::new(4, 4, 10),
            vec![ev(3, 0, 0, 1), ev(3, 1, 1, 1)],
        )
        .unwrap();
        let lr = downsample_stream(&hr).unwrap();
        assert_eq!(lr.events(), &[ev(3, 0, 0, 1)]);
    }

    #[test]
    fn downsample_keeps_distinct_polarities_and_times() {
        let hr = EventStream::new(
            Geometry::new(4, 4, 10),
            vec![ev(3, 0, 0, 1), ev(3, 1, 0, 0), ev(4, 1, 1, 1)],
        )
        .unwrap();
        assert_eq!(downsample_stream(&hr).unwrap().len(), 3);
    }

    #[test]
    fn downsample_rejects_odd_geometry() {
        let hr = EventStream::empty(Geometry::new(5, 4, 10));
        assert!(matches!(
            downsample_stream(&hr),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn stream_rejects_out_of_range() {
        let g = Geometry::new(4, 4, 10);
        assert!(matches!(
            EventStream::new(g, vec![ev(0, 9, 0, 1)]),
            Err(Error::OutOfGeometry { .. })
        ));
        assert!(matches!(
            EventStream::new(g, vec![ev(10, 0, 0, 1)]),
            Err(Error::OutOfHorizon { .. })
        ));
    }

    #[test]
    fn upsample_replicates_into_block() {
        let lr = EventStream::new(Geometry::new(2, 2, 10), vec![ev(1, 1, 0, 0)]).unwrap();
        let up = upsample_stream_nearest(&lr);
        assert_eq!((up.width, up.height), (4, 4));
        let xy: Vec<_> = up.events().iter().map(|e| (e.x, e.y)).collect();
        assert_eq!(xy, vec![(2, 0), (3, 0), (2, 1), (3, 1)]);
        assert_eq!(downsample_stream(&up).unwrap(), lr);
    }
}
