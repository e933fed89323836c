//! Checkpoint files: a `pma-v1` version line, a one-line JSON manifest
//! (embedded config plus per-tensor name/dtype/shape/byte-offset), then
//! the raw little-endian arrays.

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Real, Tensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const VERSION: &str = "pma-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn save<T: Real>(
    path: &Path,
    config: &serde_json::Value,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for (name, t) in tensors {
        let bytes = t.numel() * T::DTYPE.size();
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: T::DTYPE.name().to_string(),
            shape: t.shape().to_vec(),
            offset,
            bytes,
        });
        offset += bytes;
    }
    let manifest = Manifest {
        config: config.clone(),
        tensors: entries,
    };
    let mut out = Vec::with_capacity(offset + 1024);
    out.extend_from_slice(VERSION.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&manifest)?.as_bytes());
    out.push(b'\n');
    for (_, t) in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Load a checkpoint, casting arrays to `T` when the stored dtype differs.
#[allow(clippy::type_complexity)]
pub fn load<T: Real>(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor<T>)>)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let nl1 = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadCheckpoint("missing version line".into()))?;
    if &raw[..nl1] != VERSION.as_bytes() {
        return Err(Error::BadCheckpoint(format!(
            "version {:?} (expected {VERSION})",
            String::from_utf8_lossy(&raw[..nl1.min(32)])
        )));
    }
    let rest = &raw[nl1 + 1..];
    let nl2 = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadCheckpoint("missing manifest line".into()))?;
    let manifest: Manifest = serde_json::from_slice(&rest[..nl2])
        .map_err(|e| Error::BadCheckpoint(format!("manifest parse: {e}")))?;
    let data = &rest[nl2 + 1..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let dtype = match entry.dtype.as_str() {
            "f32" => Dtype::F32,
            "f64" => Dtype::F64,
            other => return Err(Error::BadCheckpoint(format!("unknown dtype {other:?}"))),
        };
        let numel: usize = entry.shape.iter().product();
        if entry.bytes != numel * dtype.size() || entry.offset + entry.bytes > data.len() {
            return Err(Error::BadCheckpoint(format!(
                "tensor {:?}: bad extent (offset {} bytes {} of {})",
                entry.name,
                entry.offset,
                entry.bytes,
                data.len()
            )));
        }
        let chunk = &data[entry.offset..entry.offset + entry.bytes];
        let values: Vec<T> = match dtype {
            Dtype::F32 => chunk
                .chunks_exact(4)
                .map(|b| T::of(f32::read_le(b).as_f64()))
                .collect(),
            Dtype::F64 => chunk
                .chunks_exact(8)
                .map(|b| T::of(f64::read_le(b)))
                .collect(),
        };
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), values)?));
    }
    Ok((manifest.config, tensors))
}
