//! The single serialized run configuration: training hyperparameters,
//! phantom dataset spec and test-time adaptation settings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use voxseg_core::phantom::PhantomSpec;
use voxseg_core::{TrainConfig, TtaConfig};

use crate::error::{PipelineError, Result};

pub const CONFIG_VERSION: &str = "voxseg-config/1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: String,
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub tta: TtaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION.to_string(),
            train: TrainConfig::default(),
            phantom: PhantomSpec::default(),
            tta: TtaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "unsupported config version '{}', expected '{CONFIG_VERSION}'",
                self.version
            )));
        }
        self.train
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.tta
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.phantom
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Apply a global seed override to every stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.phantom.seed = seed;
        self.tta.seed = seed;
    }
}
