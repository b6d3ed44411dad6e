//! Flat binary parameter snapshots.
//!
//! ```text
//! "BDRL"            4 bytes magic
//! version           u32 LE (currently 1)
//! layer_count       u32 LE
//! per layer:
//!   in_dim          u32 LE
//!   out_dim         u32 LE
//!   activation      u8   (see Activation::code)
//!   weights         in_dim*out_dim f64 LE, row-major [in_dim, out_dim]
//!   bias            out_dim f64 LE
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, Dense, DenseNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BDRL";
pub const VERSION: u32 = 1;

pub fn encode(net: &DenseNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + net.param_count() * 8 + net.layers().len() * 9);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        out.push(l.activation.code());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Snapshot(format!(
                "truncated at byte {} (need {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Snapshot("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<DenseNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Snapshot("no layers".into()));
    }
    // Each layer needs at least 9 header bytes; reject absurd counts up front.
    if count > r.remaining() / 9 {
        return Err(Error::Snapshot(format!("layer count {count} exceeds payload")));
    }
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let code = r.take(1)?[0];
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Snapshot(format!("layer {k}: unknown activation code {code}")))?;
        let n_weights = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| Error::Snapshot(format!("layer {k}: dimension overflow")))?;
        let weights = r.f64s(n_weights)?;
        let bias = r.f64s(out_dim)?;
        let layer = Dense::new(in_dim, out_dim, weights, bias, activation)
            .map_err(|e| Error::Snapshot(format!("layer {k}: {e}")))?;
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::Snapshot(format!("{} trailing bytes", r.remaining())));
    }
    DenseNet::from_layers(layers).map_err(|e| Error::Snapshot(e.to_string()))
}

pub fn save(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenseNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
