//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header listing
//! `{name, shape, dtype, byte_offset}` per parameter in store order, then the
//! raw little-endian payload. Offsets are relative to the payload start.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
}

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        tensors.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: T::DTYPE,
            byte_offset: payload.len() as u64,
        });
        for &v in p.value.data() {
            v.write_le(&mut payload);
        }
    }
    let header = serde_json::to_vec(&Header { tensors })?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let payload = &bytes[8 + hlen..];
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "`{}` is {} but {} was requested",
                e.name,
                e.dtype,
                T::DTYPE
            )));
        }
        let n: usize = e.shape.iter().product();
        let width = e.dtype.size_of();
        let start = e.byte_offset as usize;
        let raw = payload
            .get(start..start + n * width)
            .ok_or_else(|| Error::Checkpoint(format!("payload of `{}` out of range", e.name)))?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(out)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(store)?)
}

/// Overwrite the values of `store` from a checkpoint. Every stored parameter
/// must be present with the same shape.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let entries = decode::<T>(&std::fs::read(path)?)?;
    restore(store, entries)
}

pub fn restore<T: Scalar>(store: &mut ParamStore<T>, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, checkpoint {:?}",
                p.value.shape(),
                t.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}
