//! Binary PGM (P5) frames for looking at PSTH bins and reconstructions.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    /// Places frames left to right, padding shorter ones with black.
    pub fn hconcat(frames: &[Frame]) -> Frame {
        let height = frames.iter().map(|f| f.height).max().unwrap_or(0);
        let width: usize = frames.iter().map(|f| f.width).sum();
        let mut pixels = vec![0u8; width * height];
        let mut x0 = 0;
        for f in frames {
            for y in 0..f.height {
                let row = &f.pixels[y * f.width..(y + 1) * f.width];
                pixels[y * width + x0..y * width + x0 + f.width].copy_from_slice(row);
            }
            x0 += f.width;
        }
        Frame {
            width,
            height,
            pixels,
        }
    }
}

/// Scales a `height × width` map to 0..=255 by its own maximum. Negative
/// values clip to black; an all-zero map renders black.
pub fn render_frame(values: &[f64], width: usize, height: usize) -> Result<Frame> {
    if values.len() != width * height {
        return Err(Error::shape(format!(
            "{} values for a {width}x{height} frame",
            values.len()
        )));
    }
    let peak = values.iter().copied().fold(0.0, f64::max);
    let pixels = values
        .iter()
        .map(|&v| {
            if peak > 0.0 {
                (v.max(0.0) / peak * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(Frame {
        width,
        height,
        pixels,
    })
}

pub fn write_pgm<W: Write>(frame: &Frame, mut writer: W) -> Result<()> {
    write!(writer, "P5\n{} {}\n255\n", frame.width, frame.height)?;
    writer.write_all(&frame.pixels)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frame_is_black() {
        let f = render_frame(&[0.0; 6], 3, 2).unwrap();
        assert!(f.pixels.iter().all(|p| *p == 0));
    }

    #[test]
    fn single_value_is_brightest() {
        let mut v = vec![0.0; 4];
        v[2] = 3.0;
        let f = render_frame(&v, 2, 2).unwrap();
        assert_eq!(f.pixels, vec![0, 0, 255, 0]);
    }

    #[test]
    fn pgm_header_and_payload() {
        let f = render_frame(&[1.0, 0.5], 2, 1).unwrap();
        let mut buf = Vec::new();
        write_pgm(&f, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n2 1\n255\n");
        assert_eq!(&buf[11..], &[255, 128]);
    }

    #[test]
    fn hconcat_widths_add() {
        let a = render_frame(&[1.0; 4], 2, 2).unwrap();
        let b = render_frame(&[0.0; 2], 1, 2).unwrap();
        let c = Frame::hconcat(&[a, b]);
        assert_eq!((c.width, c.height), (3, 2));
        assert_eq!(c.pixels, vec![255, 255, 0, 255, 255, 0]);
    }
}
