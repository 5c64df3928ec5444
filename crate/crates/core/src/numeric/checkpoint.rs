//! On-disk checkpoints: `manifest.json` + `params.bin` + `config.json`.
//!
//! `params.bin` is the little-endian `f32` concatenation of every tensor in
//! manifest order; the manifest records each tensor's byte offset and shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

use super::params::ParamStore;
use super::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, store: &ParamStore<f32>, config: &serde_json::Value) -> Result<()> {
    fsio::atomic_dir(dir, |tmp| {
        let mut bytes = Vec::with_capacity(store.num_scalars() * 4);
        let mut tensors = Vec::with_capacity(store.len());
        for (name, t) in store.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape(),
                offset: bytes.len(),
                dtype: "f32".into(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            tensors,
        };
        fs::write(tmp.join("params.bin"), &bytes).map_err(|e| Error::io(tmp.join("params.bin"), e))?;
        fsio::write_json(&tmp.join("manifest.json"), &manifest)?;
        fsio::write_json(&tmp.join("config.json"), config)
    })
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = fsio::read_json(&manifest_path)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let bin_path = dir.join("params.bin");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::format(
                &manifest_path,
                format!("unsupported dtype {}", entry.dtype),
            ));
        }
        let n = entry.shape[0] * entry.shape[1];
        let end = entry.offset + 4 * n;
        if entry.offset != expected_offset || end > bytes.len() {
            return Err(Error::format(&bin_path, format!("tensor {} out of bounds", entry.name)));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(
            entry.name.clone(),
            Tensor::from_vec(entry.shape[0], entry.shape[1], data)?,
        );
        expected_offset = end;
    }
    if expected_offset != bytes.len() {
        return Err(Error::format(&bin_path, "trailing bytes after last tensor"));
    }
    let config = fsio::read_json(&dir.join("config.json"))?;
    Ok((store, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Tensor::from_fn(3, 2, |r, c| (r as f32 - c as f32) * 0.1 + 1e-7));
        store.add("a.b", Tensor::from_fn(1, 2, |_, c| -(c as f32) / 3.0));
        let cfg = serde_json::json!({"kind": "mlp"});
        let path = dir.path().join("ckpt");
        save_checkpoint(&path, &store, &cfg).unwrap();
        let (back, cfg2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        let a: Vec<_> = store.iter().collect();
        let b: Vec<_> = back.iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_params_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(4, 4));
        let path = dir.path().join("ckpt");
        save_checkpoint(&path, &store, &serde_json::json!({})).unwrap();
        fs::write(path.join("params.bin"), [0u8; 10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save_checkpoint(&path, &ParamStore::new(), &serde_json::json!({"kind": "no_drift"})).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert!(back.is_empty());
    }
}
