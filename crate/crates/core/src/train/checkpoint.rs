//! Binary checkpoint format.
//!
//! ```text
//! b"TBDL" | u32 version | u32 len, arch id | u32 tensor count
//! per tensor: u32 len, name | u32 rank | rank x u64 dims | f32 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Architecture, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TBDL";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let tensors = model.store().named_tensors();
    let id = model.arch().id().as_bytes();
    let mut out = Vec::with_capacity(16 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Integrity(format!(
                "file truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Integrity(format!("{what} is not utf-8")))
    }
}

/// Reads the header only.
pub fn peek_architecture(bytes: &[u8]) -> Result<Architecture> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<Architecture> {
    let magic = r
        .take(4, "magic")
        .map_err(|_| Error::Format("file too short for a checkpoint header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r
        .u32("version")
        .map_err(|_| Error::Format("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let id = r.string("architecture id")?;
    id.parse::<Architecture>()
        .map_err(|_| Error::Format(format!("unknown architecture id {id:?}")))
}

/// Decodes a checkpoint; `expected` adds an architecture check.
///
/// The whole file is validated before a model is returned.
pub fn decode(bytes: &[u8], expected: Option<Architecture>) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let arch = header(&mut r)?;
    if let Some(want) = expected {
        if want != arch {
            return Err(Error::ArchitectureMismatch {
                expected: want.id().into(),
                found: arch.id().into(),
            });
        }
    }
    let count = r.u32("tensor count")? as usize;
    let mut model = Model::<f32>::build(arch, 0)?;
    let needed = model.store().named_tensors().len();
    if count != needed {
        return Err(Error::Integrity(format!(
            "checkpoint holds {count} tensors, {} needs {needed}",
            arch.id()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Integrity(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Integrity(format!("tensor {name} dims overflow")))?;
        let bytes = r.take(numel.saturating_mul(4), &name)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&dims, data)
            .map_err(|e| Error::Integrity(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the tensor table",
            bytes.len() - r.pos
        )));
    }
    model.store_mut().load_named_tensors(tensors)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<Architecture>,
) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_batch() -> Tensor<f32> {
        let n = 2 * 3 * 64 * 64;
        Tensor::new(
            &[2, 3, 64, 64],
            (0..n).map(|i| (i % 251) as f32 / 250.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = Model::<f32>::build(Architecture::SqueezeNet, 3).unwrap();
        let bytes = encode(&model);
        let back = decode(&bytes, Some(Architecture::SqueezeNet)).unwrap();
        assert_eq!(encode(&back), bytes);
        let a = model.logits(fixed_batch()).unwrap();
        let b = back.logits(fixed_batch()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn corruption_is_detected() {
        let model = Model::<f32>::build(Architecture::SqueezeNet, 3).unwrap();
        let bytes = encode(&model);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3], None),
            Err(Error::Integrity(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra, None), Err(Error::Integrity(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, None), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad, None), Err(Error::Format(_))));
        assert!(matches!(
            decode(&bytes, Some(Architecture::ResNet50)),
            Err(Error::ArchitectureMismatch { .. })
        ));
    }
}
