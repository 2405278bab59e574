//! Parameter checkpoints.
//!
//! A checkpoint is one file: a single UTF-8 JSON line (the manifest)
//! terminated by `\n`, immediately followed by the raw little-endian `f64`
//! values of every tensor in manifest order. Each manifest entry records the
//! tensor name, shape, dtype (`"f64le"`), byte offset from the start of the
//! blob, and byte length.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "glenet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Free-form model description (architecture, anchor, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut offset = 0u64;
    let tensors = params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| {
            let bytes = (t.len() * 8) as u64;
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64le".into(),
                offset,
                bytes,
            };
            offset += bytes;
            e
        })
        .collect();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        meta,
        tensors,
    };
    let line = serde_json::to_string(&manifest).map_err(|e| Error::structural(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(Manifest, ParamStore)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let manifest: Manifest = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
        line: 1,
        message: format!("checkpoint manifest: {e}"),
    })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("not a checkpoint (format {:?})", manifest.format),
        });
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
            hint: "retrain or re-export the checkpoint with this release".into(),
        });
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        if e.dtype != "f64le" {
            return Err(Error::Parse {
                line: 1,
                message: format!("tensor {}: unsupported dtype {}", e.name, e.dtype),
            });
        }
        let start = e.offset as usize;
        let end = start + e.bytes as usize;
        if end > blob.len() || e.bytes as usize != 8 * e.shape.iter().product::<usize>() {
            return Err(Error::Parse {
                line: 1,
                message: format!("tensor {}: blob range {start}..{end} invalid", e.name),
            });
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    Ok((manifest, store))
}

pub fn save(path: &Path, params: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, meta)?;
    crate::io::write_atomic(path, &buf)
}

pub fn load(path: &Path) -> Result<(Manifest, ParamStore)> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamStore::new();
        p.add("a.weight", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        p.add("a.bias", Tensor::zeros(&[1, 2]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, serde_json::json!({"kind": "test"})).unwrap();
        let (m, q) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(m.tensors[1].offset, 32);
        assert_eq!(m.meta["kind"], "test");
        for (x, y) in p.tensors().iter().zip(q.tensors()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(p.names(), q.names());
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let p = ParamStore::new();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, serde_json::Value::Null).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            read_checkpoint(text.as_bytes()),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }
}
