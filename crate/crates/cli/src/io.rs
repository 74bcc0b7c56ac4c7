//! File helpers shared by the subcommands.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sdsr::events::{decode_nmnist_bin, parse_text_events, write_text_events, EventStream};
use sdsr::network::{load_checkpoint, save_checkpoint, Network};
use sdsr::trainer::Pair;

/// Reads a `.evt` text stream, or an N-MNIST `.bin` record by extension.
pub fn read_stream(path: &Path) -> Result<EventStream> {
    let is_bin = path.extension().is_some_and(|e| e == "bin");
    let stream = if is_bin {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        decode_nmnist_bin(&bytes)?
    } else {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        parse_text_events(BufReader::new(file), None)?
    };
    Ok(stream)
}

pub fn stream_bytes(stream: &EventStream) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_text_events(stream, &mut buf)?;
    Ok(buf)
}

pub fn checkpoint_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save_checkpoint(net, &mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Network> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_checkpoint(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating directory {}", path.display()))
}

/// A dataset directory: `lr/` and `hr/` holding same-named `.evt` files.
pub struct Dataset {
    pub names: Vec<String>,
    pub pairs: Vec<Pair>,
}

pub fn list_streams(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".evt") && entry.file_type()?.is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (lr_dir, hr_dir) = (dir.join("lr"), dir.join("hr"));
    if !lr_dir.is_dir() || !hr_dir.is_dir() {
        bail!("{} must contain lr/ and hr/ directories", dir.display());
    }
    let names = list_streams(&lr_dir)?;
    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        let hr_path = hr_dir.join(name);
        if !hr_path.is_file() {
            bail!("{} has no high-resolution counterpart", lr_dir.join(name).display());
        }
        let pair = Pair {
            lr: read_stream(&lr_dir.join(name))?,
            hr: read_stream(&hr_path)?,
        };
        pair.validate().with_context(|| format!("pair {name}"))?;
        pairs.push(pair);
    }
    Ok(Dataset { names, pairs })
}

/// Steps needed to cover the longest stream at `dt_ms`.
pub fn steps_for(pairs: &[Pair], dt_ms: f64) -> usize {
    let longest_us = pairs.iter().map(|p| p.hr.duration).max().unwrap_or(0);
    ((longest_us as f64 / 1000.0 / dt_ms).ceil() as usize).max(1)
}
