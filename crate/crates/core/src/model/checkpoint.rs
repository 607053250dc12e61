use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{EpochMetrics, TrainConfig};
use crate::error::Result;
use crate::nn::ParamStore;

/// Everything needed to rebuild a trained model: the training config and
/// both parameter sets in the [`ParamStore`] JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub generator: serde_json::Value,
    pub discriminator: serde_json::Value,
    #[serde(default)]
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        generator: &ParamStore,
        discriminator: &ParamStore,
        history: Vec<EpochMetrics>,
    ) -> Self {
        Self {
            config,
            generator: generator.to_json(),
            discriminator: discriminator.to_json(),
            history,
        }
    }

    pub fn generator(&self) -> Result<ParamStore> {
        ParamStore::from_json(self.generator.clone())
    }

    pub fn discriminator(&self) -> Result<ParamStore> {
        ParamStore::from_json(self.discriminator.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
