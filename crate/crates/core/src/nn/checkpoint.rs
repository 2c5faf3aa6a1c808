//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CALLO1"                 6-byte magic, format version 1
//! [u8; 32]                  SHA-256 topology hash of the NetworkSpec
//! u32                       number of parameter tensors
//! per tensor:
//!   u32 rank, rank × u32 extents
//!   extents.product() × f32 values
//! ```
//!
//! Tensors appear in declaration order (layer order, weights before bias).
//! Loading checks the magic, the topology hash, every shape, and that no
//! trailing bytes remain.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::spec::NetworkSpec;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 6] = b"CALLO1";

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        reason: reason.into(),
    }
}

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::with_capacity(64 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&net.spec().topology_hash());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
        for &e in p.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(bad(format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(spec: &NetworkSpec, bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len()).map_err(|_| bad("missing magic"))? != MAGIC {
        return Err(bad("bad magic (expected CALLO1)"));
    }
    if r.take(32)? != spec.topology_hash() {
        return Err(bad("network spec hash does not match the checkpoint"));
    }
    let mut net = Network::<T>::uninitialized(spec.clone())?;
    let count = r.u32()? as usize;
    let expected: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    if count != expected.len() {
        return Err(bad(format!(
            "checkpoint holds {count} tensors, spec needs {}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for want in &expected {
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(bad(format!("tensor shape {shape:?}, expected {want:?}")));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        values.push(Tensor::new(shape, data)?);
    }
    if r.at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    net.set_params(&values)?;
    net.mark_initialized();
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(spec: &NetworkSpec, path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(spec, &bytes)
}
