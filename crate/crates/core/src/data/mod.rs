//! Relation schema, samples and manifests, and the two feature front ends
//! (log-mel for audio, seeded synthetic features for desk-scale runs).

pub mod features;
pub mod manifest;
pub mod mel;
pub mod schema;
pub mod stats;
pub mod toy;
pub mod triple;

pub use features::{synth_features, FeatureKind, FeatureMatrix, SynthConfig};
pub use manifest::{
    load_manifest, relation_labels, write_manifest, EntityCheck, FeatureSource, LoadOptions,
    LoadedManifest, RelationLabelVector, Sample,
};
pub use mel::{extract_log_mel, log_mel_from_samples, MelConfig};
pub use schema::{RelationDef, RelationSchema};
pub use stats::{dataset_stats, DatasetStats};
pub use triple::{RelationTriple, TripleSet};

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::scalar::Scalar;

/// Turns a sample's feature source into the encoder input `X`.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub synth: SynthConfig,
    pub mel: MelConfig,
}

impl FeatureConfig {
    /// Feature dimension the encoder must accept for a given source.
    pub fn input_dims(&self, source: &FeatureSource) -> usize {
        match source {
            FeatureSource::Audio(_) => self.mel.n_mels,
            FeatureSource::Synthetic(_) => self.synth.dims,
        }
    }

    /// Relative audio paths resolve against `base_dir`.
    pub fn extract<T: Scalar>(&self, sample: &Sample, base_dir: Option<&Path>) -> Result<FeatureMatrix<T>> {
        match &sample.source {
            FeatureSource::Synthetic(_) => synth_features(sample, &self.synth),
            FeatureSource::Audio(p) => {
                let path = PathBuf::from(p);
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                };
                Ok(extract_log_mel(&path, &self.mel)?.features)
            }
        }
    }
}
