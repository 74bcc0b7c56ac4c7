//! Plain-text `.evt` interchange format.
//!
//! ```text
//! # 34 34 350000
//! 0 1 2 1
//! 5 0 0 0
//! ```
//!
//! The optional first comment carries `width height duration_us`. Every other
//! non-empty line is `t x y p`; lines starting with `#` are ignored.

use std::io::{BufRead, Write};

use super::{Event, EventStream, Geometry, Polarity};
use crate::error::{Error, Result};

/// Parses a `.evt` text stream.
///
/// Geometry comes from the header comment when present, otherwise from
/// `geometry`. When both exist they must agree.
pub fn parse_text_events<R: BufRead>(reader: R, geometry: Option<Geometry>) -> Result<EventStream> {
    let mut header: Option<Geometry> = None;
    let mut seen_data = false;
    let mut raw = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if !seen_data && header.is_none() {
                header = parse_header(comment);
            }
            continue;
        }
        seen_data = true;
        let mut fields = [0u64; 4];
        let mut tokens = line.split_whitespace();
        for (i, slot) in fields.iter_mut().enumerate() {
            let tok = tokens.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields `t x y p`, found {i}"),
            })?;
            *slot = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("not a non-negative integer: {tok:?}"),
            })?;
        }
        if tokens.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "more than 4 fields".into(),
            });
        }
        raw.push((line_no, fields));
    }

    let geometry = match (header, geometry) {
        (Some(h), Some(g)) if h != g => {
            return Err(Error::invalid(format!(
                "header geometry {h:?} disagrees with requested {g:?}"
            )))
        }
        (Some(h), _) => h,
        (None, Some(g)) => g,
        (None, None) => return Err(Error::invalid("no geometry header and none supplied")),
    };

    let mut events = Vec::with_capacity(raw.len());
    for (line_no, [t, x, y, p]) in raw {
        if x >= u64::from(geometry.width) || y >= u64::from(geometry.height) {
            return Err(Error::OutOfGeometry {
                x,
                y,
                width: geometry.width,
                height: geometry.height,
            });
        }
        let p = Polarity::from_bit(p).map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("polarity {p} is not 0 or 1"),
        })?;
        events.push(Event::new(t, x as u16, y as u16, p));
    }
    EventStream::new(geometry, events)
}

fn parse_header(comment: &str) -> Option<Geometry> {
    let vals: Vec<u64> = comment
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    match vals[..] {
        [w, h, d] => Some(Geometry::new(w.try_into().ok()?, h.try_into().ok()?, d)),
        _ => None,
    }
}

/// Writes the header comment followed by one `t x y p` line per event.
pub fn write_text_events<W: Write>(stream: &EventStream, mut writer: W) -> Result<()> {
    writeln!(
        writer,
        "# {} {} {}",
        stream.width, stream.height, stream.duration
    )?;
    for e in stream.events() {
        writeln!(writer, "{} {} {} {}", e.t, e.x, e.y, e.p.channel())?;
    }
    writer.flush()?;
    Ok(())
}
