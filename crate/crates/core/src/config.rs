//! The run configuration file: every module's settings plus paths and the
//! global seed. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FeatureConfig, LoadOptions};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::eval::Normalization;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub schema: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Feeds every random consumer through labeled substreams.
    pub seed: u64,
    pub paths: Paths,
    pub data: LoadOptions,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub eval: Normalization,
}

pub const EFFECTIVE_CONFIG_FILE: &str = "config.toml";

impl RunConfig {
    /// Settings for the synthetic toy corpus: a small backbone and a
    /// narrower relation head than the default.
    pub fn toy() -> Self {
        let mut c = RunConfig::default();
        c.features.synth = crate::data::SynthConfig {
            dims: 32,
            frames_per_token: 2,
            noise_std: 0.05,
            master_seed: 0,
        };
        c.model.backbone.ffn_dim = 128;
        c.model.lrph.channels = vec![4, 8, 8, 8];
        c.train.epochs = 20;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            c.paths.resolve_against(dir);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.ensemble.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

impl Paths {
    fn resolve_against(&mut self, dir: &Path) {
        for p in [
            &mut self.schema,
            &mut self.train_manifest,
            &mut self.dev_manifest,
            &mut self.checkpoint,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}
