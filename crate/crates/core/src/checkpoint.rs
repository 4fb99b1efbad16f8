//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `HCLCKPT\0`, a little-endian `u32` format version
//! and record count, then per parameter in store order: `u32` name length,
//! UTF-8 name, `u32` rank, `u64` per dimension and the values as
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{HclError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HCLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub value: Tensor,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn truncated(at: usize) -> HclError {
    HclError::Format {
        what: "checkpoint",
        detail: format!("truncated at byte {at}"),
    }
}

fn malformed(detail: impl Into<String>) -> HclError {
    HclError::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(malformed("bad magic header"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| malformed("name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed(format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| truncated(r.pos))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(records)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HclError::io(dir, e))?;
    }
    fs::write(path, encode(store)).map_err(|e| HclError::io(path, e))
}

/// Loads values into a store built with the same architecture. Names,
/// order and shapes must match exactly.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| HclError::io(path, e))?;
    apply(store, decode(&bytes)?)
}

pub fn apply(store: &mut ParamStore, records: Vec<Record>) -> Result<()> {
    if records.len() != store.len() {
        return Err(malformed(format!(
            "{} records for a model with {} parameters",
            records.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, rec) in ids.into_iter().zip(records) {
        if store.get(id).name != rec.name {
            return Err(malformed(format!(
                "expected parameter {}, found {}",
                store.get(id).name,
                rec.name
            )));
        }
        store.set_value(id, rec.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.weight", ParamKind::Weight, Tensor::from_fn([2, 3], |i| i as f64 - 2.5));
        s.add("b", ParamKind::Scalar, Tensor::scalar(f64::MIN_POSITIVE));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let src = store();
        let bytes = encode(&src);
        let mut dst = store();
        for id in dst.ids().collect::<Vec<_>>() {
            let zeros = Tensor::zeros(dst.value(id).shape().to_vec());
            dst.set_value(id, zeros).unwrap();
        }
        apply(&mut dst, decode(&bytes).unwrap()).unwrap();
        assert!(dst.matches(&src.snapshot()));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&store());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn rejects_other_architecture() {
        let mut other = ParamStore::new();
        other.add("a.weight", ParamKind::Weight, Tensor::zeros([3, 2]));
        other.add("b", ParamKind::Scalar, Tensor::scalar(0.0));
        let recs = decode(&encode(&store())).unwrap();
        assert!(apply(&mut other, recs).is_err());
    }
}
