use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ugformer::model::ModelConfig;
use ugformer::pipeline::TwoStageConfig;
use ugformer::training::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Side length images are resized to before entering a network.
    pub size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { size: 224 }
    }
}

/// Everything a subcommand needs, as read from the TOML config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: TwoStageConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: ugformer::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.model.check_input(self.data.size, self.data.size).map_err(wrap)?;
        self.model.check_input(self.pipeline.scar_input, self.pipeline.scar_input).map_err(wrap)?;
        Ok(())
    }
}
