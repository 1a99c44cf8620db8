use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{FeatureSource, Sample};
use crate::error::{Error, Result};
use crate::rng::{fnv1a, splitmix64, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    LogMel,
    Encoded,
}

/// Row-major `frames x dims` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    frames: usize,
    dims: usize,
    data: Vec<T>,
    kind: FeatureKind,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(frames: usize, dims: usize, data: Vec<T>, kind: FeatureKind) -> Result<Self> {
        if frames == 0 || dims == 0 {
            return Err(Error::Contract(format!(
                "feature matrix must be non-empty, got {frames}x{dims}"
            )));
        }
        if data.len() != frames * dims {
            return Err(Error::Contract(format!(
                "feature buffer has {} values, expected {frames}x{dims}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix {
            frames,
            dims,
            data,
            kind,
        })
    }

    pub fn zeros(frames: usize, dims: usize, kind: FeatureKind) -> Result<Self> {
        Self::new(frames, dims, vec![T::zero(); frames * dims], kind)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}

/// Deterministic stand-in for audio: every transcript word becomes a fixed
/// random vector held for `frames_per_token` frames, plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dims: usize,
    pub frames_per_token: usize,
    pub noise_std: f64,
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: 32,
            frames_per_token: 4,
            noise_std: 0.05,
            master_seed: 0,
        }
    }
}

fn token_embedding(token: &str, dims: usize, master_seed: u64) -> Vec<f64> {
    let mut rng = Rng::seed_from_u64(splitmix64(fnv1a(token.as_bytes()) ^ master_seed));
    (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn synth_features_for<T: Scalar>(
    transcript: &str,
    synthetic_seed: u64,
    config: &SynthConfig,
) -> Result<FeatureMatrix<T>> {
    let tokens: Vec<&str> = transcript.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::Contract("cannot synthesize features for an empty transcript".into()));
    }
    if config.dims == 0 || config.frames_per_token == 0 {
        return Err(Error::Config("synth dims and frames_per_token must be positive".into()));
    }
    let mut noise_rng = Rng::seed_from_u64(splitmix64(
        splitmix64(config.master_seed) ^ synthetic_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15),
    ));
    let frames = tokens.len() * config.frames_per_token;
    let mut data = Vec::with_capacity(frames * config.dims);
    for tok in tokens {
        let emb = token_embedding(tok, config.dims, config.master_seed);
        for _ in 0..config.frames_per_token {
            for &v in &emb {
                let noise = if config.noise_std > 0.0 {
                    let z: f64 = noise_rng.sample(StandardNormal);
                    z * config.noise_std
                } else {
                    0.0
                };
                data.push(T::c(v + noise));
            }
        }
    }
    FeatureMatrix::new(frames, config.dims, data, FeatureKind::LogMel)
}

pub fn synth_features<T: Scalar>(sample: &Sample, config: &SynthConfig) -> Result<FeatureMatrix<T>> {
    match sample.source {
        FeatureSource::Synthetic(seed) => synth_features_for(&sample.transcript, seed, config),
        FeatureSource::Audio(_) => Err(Error::Contract(format!(
            "sample `{}` has no synthetic seed",
            sample.id
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::triple::TripleSet;

    fn sample(id: &str, transcript: &str, seed: u64) -> Sample {
        Sample {
            id: id.into(),
            transcript: transcript.into(),
            triples: TripleSet::new(),
            source: FeatureSource::Synthetic(seed),
        }
    }

    #[test]
    fn frame_count_arithmetic() {
        let cfg = SynthConfig {
            frames_per_token: 8,
            ..SynthConfig::default()
        };
        let m: FeatureMatrix<f32> = synth_features(&sample("a", "w x y z", 1), &cfg).unwrap();
        assert_eq!(m.frames(), 32);
        assert_eq!(m.dims(), cfg.dims);
    }

    #[test]
    fn repeated_calls_bit_identical() {
        let cfg = SynthConfig::default();
        let s = sample("a", "alice works for acme", 3);
        let a: FeatureMatrix<f64> = synth_features(&s, &cfg).unwrap();
        let b: FeatureMatrix<f64> = synth_features(&s, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_transcripts_without_noise_match() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let a: FeatureMatrix<f32> = synth_features(&sample("a", "one two", 1), &cfg).unwrap();
        let b: FeatureMatrix<f32> = synth_features(&sample("b", "one two", 99), &cfg).unwrap();
        assert_eq!(a.data(), b.data());
        // same word, same frames
        let c: FeatureMatrix<f32> = synth_features(&sample("c", "two one", 5), &cfg).unwrap();
        assert_eq!(a.row(0), c.row(cfg.frames_per_token));
    }

    #[test]
    fn noise_depends_on_sample_seed() {
        let cfg = SynthConfig::default();
        let a: FeatureMatrix<f32> = synth_features(&sample("a", "one two", 1), &cfg).unwrap();
        let b: FeatureMatrix<f32> = synth_features(&sample("b", "one two", 2), &cfg).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn empty_transcript_errors() {
        let r: Result<FeatureMatrix<f32>> =
            synth_features(&sample("a", "   ", 1), &SynthConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let r = FeatureMatrix::new(1, 2, vec![0.0f32, f32::NAN], FeatureKind::LogMel);
        assert!(r.is_err());
        assert!(FeatureMatrix::<f32>::zeros(0, 3, FeatureKind::LogMel).is_err());
    }
}
