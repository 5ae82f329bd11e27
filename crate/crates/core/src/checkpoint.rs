//! Single-file model archive.
//!
//! Layout:
//!
//! ```text
//! b"scnet-ckpt-v1\n"
//! u64 (little endian)   header length in bytes
//! header                JSON: {"config", "meta", "tensors": [{name, shape, offset}]}
//! payload               every tensor as little-endian f32, in key order
//! ```
//!
//! Tensors are written in lexicographic key order and the header has a fixed
//! field order, so identical parameters always give identical bytes.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8] = b"scnet-ckpt-v1\n";

/// Training metadata stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    /// Binarisation threshold chosen on held-out data.
    pub threshold: Option<f64>,
    pub iterations: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    entries: Vec<Entry>,
    data: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Result<Self> {
        let mut entries = Vec::with_capacity(model.params().len());
        let mut data = Vec::with_capacity(model.parameter_count());
        for (name, p) in model.params().iter() {
            entries.push(Entry {
                name: name.to_string(),
                shape: p.var.dims().to_vec(),
                offset: data.len(),
            });
            data.extend(p.var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
        }
        Ok(Self {
            config: model.config().clone(),
            meta,
            entries,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self.entries.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| fail("missing scnet-ckpt-v1 magic".into()))?;
        if rest.len() < 8 {
            return Err(fail("truncated header length".into()));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(fail("truncated header".into()));
        }
        let (header, payload) = rest.split_at(len);
        let header: Header = serde_json::from_slice(header).map_err(|e| fail(format!("bad header: {e}")))?;
        if payload.len() % 4 != 0 {
            return Err(fail("payload is not a whole number of f32 values".into()));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset + n > data.len() {
                return Err(fail(format!("tensor `{}` runs past the payload", e.name)));
            }
        }
        Ok(Self {
            config: header.config,
            meta: header.meta,
            entries: header.tensors,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn tensors(&self, device: &Device) -> Result<Vec<(String, Tensor)>> {
        self.entries
            .iter()
            .map(|e| {
                let n: usize = e.shape.iter().product();
                let t = Tensor::from_slice(&self.data[e.offset..e.offset + n], e.shape.as_slice(), device)?;
                Ok((e.name.clone(), t))
            })
            .collect()
    }

    /// Rebuilds the model and loads every parameter; all keys must match.
    pub fn to_model(&self, device: &Device) -> Result<Model> {
        let model = Model::new(self.config.clone(), device)?;
        let expected: Vec<&str> = model.params().iter().map(|(k, _)| k).collect();
        let found: Vec<&str> = self.names().collect();
        if expected != found {
            let missing: Vec<_> = expected.iter().filter(|k| !found.contains(k)).collect();
            return Err(Error::Checkpoint {
                path: PathBuf::new(),
                reason: format!("parameter set does not match the stored config; missing {missing:?}"),
            });
        }
        for (name, t) in self.tensors(device)? {
            model.params().set(&name, &t)?;
        }
        Ok(model)
    }
}

/// Loads a model and its metadata from disk.
pub fn load_model(path: impl AsRef<Path>, device: &Device) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let ckpt = Checkpoint::read(path)?;
    let model = ckpt.to_model(device).map_err(|e| match e {
        Error::Checkpoint { reason, .. } => Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })?;
    Ok((model, ckpt.meta))
}

pub fn save_model(path: impl AsRef<Path>, model: &Model, meta: CheckpointMeta) -> Result<()> {
    Checkpoint::from_model(model, meta)?.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;

    fn small() -> ModelConfig {
        ModelConfig::full().narrowed(32)
    }

    #[test]
    fn round_trip_restores_parameters_and_meta() {
        let m = Model::new(small(), &Device::Cpu).unwrap();
        m.init_weights(&InitScheme::Xavier, 5).unwrap();
        let meta = CheckpointMeta {
            threshold: Some(0.42),
            iterations: 17,
            seed: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_model(&p, &m, meta.clone()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(MAGIC));
        let (m2, meta2) = load_model(&p, &Device::Cpu).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(m.params().flat_values().unwrap(), m2.params().flat_values().unwrap());
        assert_eq!(m2.config(), m.config());
    }

    #[test]
    fn rejects_foreign_files() {
        let err = Checkpoint::from_bytes(b"PK\x03\x04 not ours", Path::new("x"));
        assert!(matches!(err, Err(Error::Checkpoint { .. })));
        let m = Model::new(small(), &Device::Cpu).unwrap();
        let mut bytes = Checkpoint::from_model(&m, CheckpointMeta::default()).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn pretrained_encoder_init_copies_encoder_only() {
        let src = Model::new(small(), &Device::Cpu).unwrap();
        src.init_weights(&InitScheme::Xavier, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.ckpt");
        save_model(&p, &src, CheckpointMeta::default()).unwrap();

        let dst = Model::new(small(), &Device::Cpu).unwrap();
        dst.init_weights(&InitScheme::PretrainedEncoder(p), 99).unwrap();
        for (name, param) in dst.params().iter() {
            let a = param.var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = src.params().get(name).unwrap().var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            if name.starts_with("encoder.") {
                assert_eq!(a, b, "{name}");
            } else if name.ends_with(".weight") && name.starts_with("decoder.") {
                assert_ne!(a, b, "{name}");
            }
        }
    }
}
