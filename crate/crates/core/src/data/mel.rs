//! Log-mel spectrogram front end for real audio.
//!
//! Periodic Hann window, centered frames with zero padding of `n_fft / 2` on
//! both sides, power spectrum, HTK-scale triangular filter bank (unnormalized)
//! and natural log with a floor.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::features::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// Defaults to Nyquist when absent.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 400,
            hop_length: 160,
            n_mels: 80,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(f64::from(self.sample_rate) / 2.0)
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_fft < 2 || self.hop_length == 0 || self.n_mels == 0 {
            return Err(Error::Config(format!("invalid mel configuration {self:?}")));
        }
        if !(self.log_floor > 0.0) || self.f_min < 0.0 || self.f_max() <= self.f_min {
            return Err(Error::Config(format!("invalid mel frequency range {self:?}")));
        }
        Ok(())
    }
}

/// Parameterization echoed next to extracted features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelMetadata {
    pub config: MelConfig,
    pub num_samples: usize,
    pub num_frames: usize,
    pub window: String,
    pub mel_scale: String,
}

#[derive(Debug, Clone)]
pub struct LogMel<T> {
    pub features: FeatureMatrix<T>,
    pub metadata: MelMetadata,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels x (n_fft/2 + 1)` triangular filter weights.
pub fn mel_filterbank(config: &MelConfig) -> Vec<Vec<f64>> {
    let bins = config.n_fft / 2 + 1;
    let lo = hz_to_mel(config.f_min);
    let hi = hz_to_mel(config.f_max());
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(config.sample_rate) / config.n_fft as f64;
    (0..config.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn log_mel_from_samples<T: Scalar>(samples: &[T], config: &MelConfig) -> Result<LogMel<T>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Audio("zero-length audio".into()));
    }
    let n_fft = config.n_fft;
    let pad = n_fft / 2;
    let mut padded = vec![T::zero(); samples.len() + 2 * pad];
    padded[pad..pad + samples.len()].copy_from_slice(samples);
    let frames = 1 + samples.len() / config.hop_length;

    let window: Vec<T> = (0..n_fft)
        .map(|i| T::c(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos()))
        .collect();
    let bank: Vec<Vec<T>> = mel_filterbank(config)
        .into_iter()
        .map(|row| row.into_iter().map(T::c).collect())
        .collect();
    let floor = T::c(config.log_floor);
    let bins = n_fft / 2 + 1;

    let fft = FftPlanner::<T>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n_fft];
    let mut power = vec![T::zero(); bins];
    let mut data = Vec::with_capacity(frames * config.n_mels);
    for f in 0..frames {
        let start = f * config.hop_length;
        for i in 0..n_fft {
            let x = padded.get(start + i).copied().unwrap_or_else(T::zero);
            buf[i] = Complex::new(x * window[i], T::zero());
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let e: T = filt.iter().zip(&power).map(|(&w, &p)| w * p).sum();
            data.push(e.max(floor).ln());
        }
    }
    let features = FeatureMatrix::new(frames, config.n_mels, data, FeatureKind::LogMel)?;
    Ok(LogMel {
        features,
        metadata: MelMetadata {
            config: config.clone(),
            num_samples: samples.len(),
            num_frames: frames,
            window: "periodic_hann".into(),
            mel_scale: "htk".into(),
        },
    })
}

/// Reads a WAV file (channels averaged, integer formats scaled to [-1, 1]).
pub fn read_wav<T: Scalar>(path: &Path) -> Result<(Vec<T>, u32)> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample.max(1) - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let mono = raw
        .chunks(channels)
        .map(|c| T::c(c.iter().sum::<f64>() / c.len() as f64))
        .collect();
    Ok((mono, spec.sample_rate))
}

pub fn extract_log_mel<T: Scalar>(audio_path: impl AsRef<Path>, config: &MelConfig) -> Result<LogMel<T>> {
    let path = audio_path.as_ref();
    let (samples, rate) = read_wav::<T>(path)?;
    if rate != config.sample_rate {
        return Err(Error::Audio(format!(
            "{}: sample rate {rate} Hz, expected {} Hz",
            path.display(),
            config.sample_rate
        )));
    }
    if samples.is_empty() {
        return Err(Error::Audio(format!("{}: zero-length audio", path.display())));
    }
    log_mel_from_samples(&samples, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_inverts() {
        for hz in [0.0, 440.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_triangles_peaking_at_one() {
        let cfg = MelConfig::default();
        let bank = mel_filterbank(&cfg);
        assert_eq!(bank.len(), 80);
        for row in &bank {
            assert_eq!(row.len(), 201);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn zero_length_errors() {
        assert!(log_mel_from_samples::<f32>(&[], &MelConfig::default()).is_err());
    }

    #[test]
    fn missing_file_is_audio_error() {
        let r = extract_log_mel::<f32>("/nonexistent/x.wav", &MelConfig::default());
        assert!(matches!(r, Err(Error::Audio(_))));
    }
}
