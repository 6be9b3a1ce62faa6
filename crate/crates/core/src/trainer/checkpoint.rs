//! Versioned safetensors checkpoints with JSON metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::config::TrainConfig;

pub const FORMAT: &str = "dri-iqa-checkpoint";
pub const VERSION: u32 = 1;
/// The one safetensors metadata key; its value is a JSON object.
pub const HEADER_KEY: &str = "dri_iqa";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub config: TrainConfig,
    pub palette_hash: String,
    pub dim: usize,
    pub tau: f64,
    /// Last completed epoch (1-based); 0 before any training.
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Tensors under `prefix`, with the prefix kept.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Tensors under `from`, renamed to start with `to`.
    pub fn renamed(&self, from: &str, to: &str) -> BTreeMap<String, Tensor> {
        self.section(from)
            .into_iter()
            .map(|(k, v)| (format!("{to}{}", &k[from.len()..]), v))
            .collect()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.meta.dim != dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint has representation dimension {}, expected {dim}",
                self.meta.dim
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        // A single header key: safetensors writes its metadata map in hash
        // order, so more than one key would make the bytes nondeterministic.
        let header = serde_json::json!({ "format": FORMAT, "version": VERSION, "meta": self.meta });
        let info = HashMap::from([(HEADER_KEY.to_string(), header.to_string())]);
        let data: Vec<(String, &Tensor)> = self.tensors.iter().map(|(k, v)| (k.clone(), v)).collect();
        safetensors::serialize(data, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8], dev: &Device) -> Result<Self> {
        let (_, header) =
            safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let raw = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| Error::Checkpoint("missing metadata header".into()))?;
        let info: serde_json::Value = serde_json::from_str(raw)?;
        if info.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(Error::Checkpoint("not a dri-iqa checkpoint".into()));
        }
        let version = info
            .get("version")
            .ok_or_else(|| Error::Checkpoint("missing format version".into()))?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("unreadable format version".into()))?;
        if version != VERSION as u64 {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, this build reads {VERSION}"
            )));
        }
        let meta: CheckpointMeta = serde_json::from_value(
            info.get("meta")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing run metadata".into()))?,
        )?;
        let tensors = candle_core::safetensors::load_buffer(bytes, dev)?.into_iter().collect();
        Ok(Self { meta, tensors })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path, dev: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes, dev)
    }
}

/// Atomic file replacement: write-temp, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let wrap = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn sample() -> Checkpoint {
        let dev = Device::Cpu;
        let mut tensors = BTreeMap::new();
        tensors.insert("dre.w".into(), Tensor::arange(0f32, 6.0, &dev).unwrap().reshape((2, 3)).unwrap());
        tensors.insert("pred.b".into(), Tensor::ones(4, DType::F64, &dev).unwrap());
        Checkpoint {
            meta: CheckpointMeta {
                stage: 1,
                config: TrainConfig::default(),
                palette_hash: "abc".into(),
                dim: 128,
                tau: 0.07,
                epoch: 3,
                step: 12,
                seed: 7,
            },
            tensors,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap(), &Device::Cpu).unwrap();
        assert_eq!(back.meta, c.meta);
        for (k, v) in &c.tensors {
            let w = &back.tensors[k];
            assert_eq!(v.dtype(), w.dtype());
            assert_eq!(
                v.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap(),
                w.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
            );
        }
        assert!(back.check_dim(128).is_ok());
        assert!(back.check_dim(64).is_err());
    }

    #[test]
    fn missing_version_rejected() {
        let dev = Device::Cpu;
        let t = Tensor::ones(2, DType::F32, &dev).unwrap();
        let info = HashMap::from([(HEADER_KEY.to_string(), format!("{{\"format\":\"{FORMAT}\"}}"))]);
        let bytes = safetensors::serialize(vec![("x", &t)], Some(info)).unwrap();
        let err = Checkpoint::from_bytes(&bytes, &dev).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bytes_are_deterministic() {
        let c = sample();
        assert_eq!(c.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn renamed_section() {
        let c = sample();
        let r = c.renamed("dre.", "frozen_dre.");
        assert!(r.contains_key("frozen_dre.w"));
        assert_eq!(r.len(), 1);
    }
}
