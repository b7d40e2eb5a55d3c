//! Versioned JSON checkpoints holding the config, every parameter tensor
//! and the permutation state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Forecaster;
use crate::trainer::TrainConfig;

pub const FORMAT: &str = "rco-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub model: Forecaster,
    /// Caller-defined extras, e.g. how to rebuild the dataset.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: Forecaster, epochs_completed: usize, metadata: serde_json::Value) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config,
            epochs_completed,
            model,
            metadata,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: serde_json::Value = serde_json::from_str(&text)?;
        let format = header.get("format").and_then(|f| f.as_str());
        if format != Some(FORMAT) {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let version = header.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(VERSION)) {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version:?}, expected {VERSION}"
            )));
        }
        Ok(serde_json::from_value(header)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::build_model;

    #[test]
    fn roundtrip_is_exact() {
        let config = TrainConfig::default();
        let mut model = build_model(&config, [4, 3], 2).unwrap();
        model.rco.as_mut().unwrap().tau = 0.1 * 0.9;
        model.backbone.head.bias.value.data_mut()[0] = 1.0 / 3.0;
        let ckpt = Checkpoint::new(config, model, 7, serde_json::json!({"note": 1}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, r#"{"format":"rco-checkpoint","version":99}"#).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
        std::fs::write(&path, r#"{"hello":1}"#).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }
}
