//! Single-file checkpoint container: safetensors weights plus a JSON metadata
//! block stored in the safetensors header under one key.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;

const META_KEY: &str = "inkdiff";

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_params(&mut self, prefix: &str, params: &ParamStore) -> Result<()> {
        for (name, var) in params.sorted() {
            self.tensors
                .insert(format!("{prefix}{name}"), var.as_tensor().detach());
        }
        Ok(())
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.metadata
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn meta<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.metadata.get(key).ok_or_else(|| Error::Format {
            what: "checkpoint",
            detail: format!("missing metadata {key:?}"),
        })?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.metadata.contains_key(key)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut header = HashMap::new();
        header.insert(META_KEY.to_string(), serde_json::to_string(&self.metadata)?);
        safetensors::serialize_to_file(self.tensors.iter(), Some(header), path).map_err(|e| {
            Error::Format {
                what: "checkpoint",
                detail: format!("{}: {e}", path.display()),
            }
        })
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |detail: String| Error::Format {
            what: "checkpoint",
            detail: format!("{}: {detail}", path.display()),
        };
        let (_, meta) =
            safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let metadata = match meta.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
            Some(json) => serde_json::from_str(json)?,
            None => return Err(bad("no metadata block".into())),
        };
        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?
            .into_iter()
            .collect();
        Ok(Checkpoint { tensors, metadata })
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let store = ParamStore::new(3);
        store
            .builder(DType::F32, &Device::Cpu)
            .get_with_hints(
                (2, 3),
                "lin.weight",
                candle_nn::init::DEFAULT_KAIMING_NORMAL,
            )
            .unwrap();
        let mut ck = Checkpoint::new();
        ck.add_params("model.", &store).unwrap();
        ck.set_meta("steps", &42usize).unwrap();
        ck.save(&path).unwrap();

        let loaded = Checkpoint::load(&path, &Device::Cpu).unwrap();
        assert_eq!(loaded.meta::<usize>("steps").unwrap(), 42);
        let fresh = ParamStore::new(99);
        fresh
            .builder(DType::F32, &Device::Cpu)
            .get_with_hints(
                (2, 3),
                "lin.weight",
                candle_nn::init::DEFAULT_KAIMING_NORMAL,
            )
            .unwrap();
        fresh.restore(&loaded.tensors, "model.").unwrap();
        assert_eq!(
            fresh.get("lin.weight").unwrap().to_vec2::<f32>().unwrap(),
            store.get("lin.weight").unwrap().to_vec2::<f32>().unwrap()
        );
        assert!(loaded.meta::<usize>("missing").is_err());
    }
}
