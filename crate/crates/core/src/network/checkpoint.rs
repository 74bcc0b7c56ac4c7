//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! | field | type |
//! |-------|------|
//! | magic | `b"SDSR"` |
//! | version | `u32` |
//! | config length `n` | `u32` |
//! | config | `n` bytes of JSON ([`NetworkConfig`]) |
//! | `sdnn_c1` kernel | `f64` × len |
//! | `sdnn_ct` kernel | `f64` × len |
//! | `sdnn_c2` kernel | `f64` × len |
//! | thresholds (input, c1, ct, c2) | `f64` × 4 |
//! | batch-norm running mean | `f64` × input channels |
//!
//! Kernel lengths follow from the config. Values are stored bit-exactly.

use std::io::{Read, Write};

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::{MeanOnlyBatchNorm, Weights};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDSR";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<W: Write>(net: &Network, mut sink: W) -> Result<()> {
    let config = serde_json::to_vec(&net.config)?;
    let mut buf = Vec::with_capacity(16 + config.len() + 8 * net.flat_params().len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let arrays: [&[f64]; 5] = [
        &net.c1.data,
        &net.ct.data,
        &net.c2.data,
        &net.thresholds,
        &net.bn.running_mean,
    ];
    for arr in arrays {
        for v in arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut source: R) -> Result<Network> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n = cur.u32()? as usize;
    let config: NetworkConfig = serde_json::from_slice(cur.take(n)?)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    config.validate()?;

    let c1 = Weights::from_vec(&config.c1, cur.f64s(config.c1.weight_len())?)?;
    let ct = Weights::from_vec(&config.ct, cur.f64s(config.ct.weight_len())?)?;
    let c2 = Weights::from_vec(&config.c2, cur.f64s(config.c2.weight_len())?)?;
    let th = cur.f64s(4)?;
    let mut bn = MeanOnlyBatchNorm::new(config.c1.in_channels, config.bn_momentum);
    bn.running_mean = cur.f64s(config.c1.in_channels)?;
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(Network {
        config,
        c1,
        ct,
        c2,
        thresholds: [th[0], th[1], th[2], th[3]],
        bn,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Mode;

    fn saved() -> (Network, Vec<u8>) {
        let mut net = Network::build(NetworkConfig::new(Mode::Sdnn, 6, 6)).unwrap();
        net.thresholds[2] = 0.731;
        net.bn.running_mean = vec![0.01, -0.02];
        let mut buf = Vec::new();
        save_checkpoint(&net, &mut buf).unwrap();
        (net, buf)
    }

    #[test]
    fn roundtrip_is_exact() {
        let (net, buf) = saved();
        assert_eq!(&buf[..4], b"SDSR");
        assert_eq!(load_checkpoint(buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn corrupted_magic() {
        let (_, mut buf) = saved();
        buf[0] = b'X';
        assert!(matches!(load_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch() {
        let (_, mut buf) = saved();
        buf[4] = 9;
        let err = load_checkpoint(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_and_trailing() {
        let (_, buf) = saved();
        assert!(load_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(load_checkpoint(&buf[..10]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(load_checkpoint(longer.as_slice()).is_err());
    }
}
