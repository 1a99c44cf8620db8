//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::backbone::Vocabulary;
use crate::data::{FeatureConfig, RelationDef, RelationSchema};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SpeechReModel};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "speechre-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    scalar: String,
}

/// Training state stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: usize,
    pub rng: Rng,
    /// Effective run configuration, kept verbatim for reference.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct CheckpointFile<T> {
    format: String,
    version: u32,
    scalar: String,
    meta: CheckpointMeta,
    schema: Vec<RelationDef>,
    vocab: Vocabulary,
    features: FeatureConfig,
    model: ModelConfig,
    input_dims: usize,
    params: ParamStore<T>,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &SpeechReModel<T>, meta: &CheckpointMeta) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        scalar: T::NAME.to_string(),
        meta: meta.clone(),
        schema: model.schema.relations().to_vec(),
        vocab: model.vocab.clone(),
        features: model.features.clone(),
        model: model.config.clone(),
        input_dims: model.input_dims(),
        params: model.store.clone(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(SpeechReModel<T>, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: unreadable header: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (format {:?})",
            path.display(),
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    if header.scalar != T::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, requested {}",
            header.scalar,
            T::NAME
        )));
    }
    let file: CheckpointFile<T> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let schema = RelationSchema::new(file.schema)?;
    let model = SpeechReModel::from_parts(schema, file.vocab, file.features, file.model, file.input_dims, file.params)?;
    Ok((model, file.meta))
}
