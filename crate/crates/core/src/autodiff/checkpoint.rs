//! Named tensors on disk: a JSON manifest plus a raw little-endian `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::write_atomic;

const FORMAT: &str = "sifsr-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    payload: String,
    tensors: Vec<Entry>,
    metadata: serde_json::Value,
}

/// Payload file that sits next to a manifest.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `tensors` and free-form `metadata`. The manifest lands at `path`.
pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, Tensor)],
    metadata: serde_json::Value,
) -> Result<()> {
    let payload = payload_path(path);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape(),
            offset: bytes.len() / 8,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64le".into(),
        payload: payload
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors: entries,
        metadata,
    };
    write_atomic(&payload, &bytes)?;
    write_atomic(path, &serde_json::to_vec_pretty(&manifest)?)
}

/// Reads back what [`save_checkpoint`] wrote.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.format != FORMAT || manifest.dtype != "f64le" {
        return Err(Error::format(path, "not a checkpoint manifest"));
    }
    if manifest.version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", manifest.version),
        ));
    }
    let payload = path.with_file_name(&manifest.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&payload, "payload is not a whole number of f64"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::format(&payload, format!("tensor {} overruns payload", e.name)))?;
        out.push((e.name, Tensor::from_vec(e.shape, data.to_vec())?));
    }
    Ok((out, manifest.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let a = Tensor::from_vec([1, 2, 1, 2], vec![0.1, -2.5e-300, 3.0, f64::MAX]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let meta = serde_json::json!({"width": [8, 16]});
        save_checkpoint(&path, &[("a".into(), a.clone()), ("b".into(), b.clone())], meta.clone())
            .unwrap();
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, vec![("a".to_string(), a), ("b".to_string(), b)]);
        assert_eq!(m, meta);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &[("w".into(), Tensor::zeros([1, 1, 2, 2]))], serde_json::Value::Null)
            .unwrap();
        fs::write(payload_path(&path), [0u8; 16]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
