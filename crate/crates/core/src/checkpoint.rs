//! Tensor checkpoints: a single safetensors file whose header metadata
//! carries string key/value pairs (format version, config hash, epoch, ...).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "1";
const VERSION_KEY: &str = "format_version";

/// Named tensors plus string metadata.
#[derive(Debug, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensors(&mut self, prefix: &str, tensors: BTreeMap<String, Tensor>) {
        for (k, v) in tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::VersionMismatch(format!("checkpoint lacks metadata key {key}")))
    }

    pub fn meta_json<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        Ok(serde_json::from_str(self.meta(key)?)?)
    }

    pub fn tensor_map(&self) -> HashMap<String, Tensor> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta: HashMap<String, String> =
            self.meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        meta.insert(VERSION_KEY.into(), CHECKPOINT_VERSION.into());
        let tmp = path.with_extension("tmp");
        let tensors: Vec<(&String, Tensor)> = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k, t.contiguous()?)))
            .collect::<Result<_>>()?;
        safetensors::serialize_to_file(tensors, Some(meta), &tmp)
            .map_err(|e| Error::io(&tmp, std::io::Error::other(e.to_string())))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: safetensors::SafeTensorError| {
            Error::ParseError(format!("{}: {e}", path.display()))
        };
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
        let mut meta: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        match meta.remove(VERSION_KEY).as_deref() {
            Some(CHECKPOINT_VERSION) => {}
            other => {
                return Err(Error::VersionMismatch(format!(
                    "checkpoint format {other:?}, expected {CHECKPOINT_VERSION}"
                )))
            }
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?
            .into_iter()
            .collect();
        Ok(Self { tensors, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.safetensors");
        let mut c = Checkpoint::new();
        c.tensors
            .insert("a.w".into(), Tensor::new(&[[1f32, 2.], [3., 4.]], &Device::Cpu).unwrap());
        c.tensors.insert("step".into(), Tensor::new(&[7u32], &Device::Cpu).unwrap());
        c.set_meta("epoch", 3);
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.meta("epoch").unwrap(), "3");
        assert_eq!(
            back.tensors["a.w"].to_vec2::<f32>().unwrap(),
            vec![vec![1., 2.], vec![3., 4.]]
        );
        assert_eq!(back.tensors["step"].to_vec1::<u32>().unwrap(), vec![7]);
        assert!(back.meta("missing").is_err());
    }

    #[test]
    fn rejects_garbage() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.safetensors");
        std::fs::write(&p, b"nope").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
