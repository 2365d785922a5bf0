use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "fedcctr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON parameter dump. `config_hash` ties it to the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub round: usize,
    pub model: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config_hash: String, round: usize, model: ModelConfig, params: ModelParams) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config_hash, round, model, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }
}
