//! Binary checkpoint format.
//!
//! ```text
//! magic "C2CK" | u32 format version | 32-byte arch digest | u64 version
//! | u64 step | u32 arch-json length | arch json | u32 tensor count
//! | per tensor: u32 name length, name, u32 rank, u64 dims..., f64 data...
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ArchConfig, PolicyError, PolicyParams};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 4] = b"C2CK";
const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(params: &PolicyParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_params() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.arch.digest());
    out.extend_from_slice(&params.version.to_le_bytes());
    out.extend_from_slice(&params.step.to_le_bytes());
    let arch = serde_json::to_vec(&params.arch).expect("arch serializes");
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.tensors() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PolicyError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. With `expected`, the stored architecture digest must
/// match it.
pub fn from_bytes(buf: &[u8], expected: Option<&ArchConfig>) -> Result<PolicyParams, PolicyError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let fv = r.u32()?;
    if fv != FORMAT_VERSION {
        return Err(PolicyError::Checkpoint(format!("unsupported format version {fv}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(a) = expected {
        if a.digest() != digest {
            return Err(PolicyError::DigestMismatch {
                expected: a.digest_hex(),
                found: hex::encode(digest),
            });
        }
    }
    let version = r.u64()?;
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| PolicyError::Checkpoint(format!("arch block: {e}")))?;
    if arch.digest() != digest {
        return Err(PolicyError::Checkpoint("arch block does not match its digest".into()));
    }
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| PolicyError::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel.checked_mul(8).ok_or_else(|| PolicyError::Checkpoint("tensor too large".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(PolicyError::Checkpoint("trailing bytes".into()));
    }
    PolicyParams::from_tensors(&arch, tensors, version, step)
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    std::fs::write(path, to_bytes(params))
        .map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path, expected: Option<&ArchConfig>) -> Result<PolicyParams, PolicyError> {
    let buf = std::fs::read(path).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&buf, expected)
}
