//! Binary parameter checkpoints.
//!
//! Layout: the 7-byte magic `STDAC01`, then entries until end of file:
//! `u32` name length, UTF-8 name bytes, `u32` rank, `u64` dims and the
//! `f64` payload, all little-endian.

use alloc::string::String;
use alloc::vec::Vec;

use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 7] = b"STDAC01";

/// One decoded checkpoint entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (_, p) in store.iter() {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
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
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(alloc::format!(
                    "truncated: need {} bytes at offset {}, have {}",
                    n,
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .into();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("shape overflows".into()))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("shape overflows".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(Entry {
            name,
            tensor: Tensor::new(&shape, data)?,
        });
    }
    Ok(entries)
}

/// Restores every parameter of `store` from decoded entries by name.
pub fn restore(store: &mut ParamStore, entries: &[Entry]) -> Result<()> {
    for e in entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::UnknownParameter(e.name.clone()))?;
        let p = store.get_mut(id);
        if p.value().shape() != e.tensor.shape() {
            return Err(Error::Checkpoint(alloc::format!(
                "{}: shape {:?} in file, model expects {:?}",
                e.name,
                e.tensor.shape(),
                p.value().shape()
            )));
        }
        *p.value_mut() = e.tensor.clone();
    }
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(alloc::format!(
            "checkpoint has {} entries, model has {} parameters",
            entries.len(),
            store.len()
        )));
    }
    Ok(())
}
