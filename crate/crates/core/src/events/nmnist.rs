//! Read-only loader for N-MNIST / ATIS `.bin` recordings.
//!
//! Each event is 5 bytes:
//!
//! | byte | content |
//! |------|---------|
//! | 0 | x |
//! | 1 | y |
//! | 2 | bit 7 polarity, bits 6..0 timestamp bits 22..16 |
//! | 3 | timestamp bits 15..8 |
//! | 4 | timestamp bits 7..0 |

use super::{Event, EventStream, Geometry, Polarity};
use crate::error::{Error, Result};

/// Sensor side length of N-MNIST recordings.
pub const NMNIST_SIZE: u32 = 34;

const RECORD: usize = 5;

/// Decodes a complete N-MNIST file. The stream duration is one past the last
/// timestamp.
pub fn decode_nmnist_bin(bytes: &[u8]) -> Result<EventStream> {
    let rem = bytes.len() % RECORD;
    if rem != 0 {
        return Err(Error::PartialRecord(rem));
    }
    let mut events = Vec::with_capacity(bytes.len() / RECORD);
    let mut last = 0u64;
    for rec in bytes.chunks_exact(RECORD) {
        let (x, y) = (rec[0], rec[1]);
        if u32::from(x) >= NMNIST_SIZE || u32::from(y) >= NMNIST_SIZE {
            return Err(Error::OutOfGeometry {
                x: x.into(),
                y: y.into(),
                width: NMNIST_SIZE,
                height: NMNIST_SIZE,
            });
        }
        let p = if rec[2] & 0x80 != 0 {
            Polarity::On
        } else {
            Polarity::Off
        };
        let t = (u64::from(rec[2] & 0x7f) << 16) | (u64::from(rec[3]) << 8) | u64::from(rec[4]);
        last = last.max(t);
        events.push(Event::new(t, x.into(), y.into(), p));
    }
    let duration = if events.is_empty() { 0 } else { last + 1 };
    EventStream::new(Geometry::new(NMNIST_SIZE, NMNIST_SIZE, duration), events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarity_bit_and_coordinates() {
        let s = decode_nmnist_bin(&[0x01, 0x02, 0x80, 0x00, 0x00]).unwrap();
        assert_eq!(s.events(), &[Event::new(0, 1, 2, Polarity::On)]);
        assert_eq!((s.width, s.height), (34, 34));
    }

    #[test]
    fn low_byte_timestamp() {
        let s = decode_nmnist_bin(&[0x00, 0x00, 0x00, 0x00, 0x0A]).unwrap();
        assert_eq!(s.events(), &[Event::new(10, 0, 0, Polarity::Off)]);
    }

    #[test]
    fn full_23_bit_timestamp() {
        let s = decode_nmnist_bin(&[0x00, 0x00, 0xFF, 0xFF, 0xFF]).unwrap();
        assert_eq!(s.events()[0].t, (1 << 23) - 1);
        assert_eq!(s.events()[0].p, Polarity::On);
    }

    #[test]
    fn partial_record_is_rejected() {
        assert!(matches!(
            decode_nmnist_bin(&[0; 6]),
            Err(Error::PartialRecord(1))
        ));
    }

    #[test]
    fn coordinate_out_of_sensor() {
        assert!(matches!(
            decode_nmnist_bin(&[34, 0, 0, 0, 0]),
            Err(Error::OutOfGeometry { .. })
        ));
    }
}
