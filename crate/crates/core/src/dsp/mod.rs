//! Audio ingestion, noise mixing and the log-mel front end.

mod features;
mod manifest;
mod mix;
mod noise;
mod wav;

pub use features::{
    apply_masks, cms, crop_segment, log_mel, mel_center_frequencies, spec_augment, FeatureMatrix,
    FRAME_LENGTH, FRAME_SHIFT, N_FFT, N_MELS,
};
pub use manifest::{read_dataset_manifest, read_noise_manifest, DatasetRecord, NoiseRecord};
pub use mix::{measured_snr_db, mix_at_snr, rms, MixInfo};
pub use noise::{NoiseBank, NoiseEntry, NoiseSplit};
pub use wav::{load_wav, write_wav};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("{path}: unsupported format: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("{path}: unsupported sample rate {rate} Hz (expected 16000)")]
    UnsupportedRate { path: String, rate: u32 },
    #[error("{path}: corrupt file: {reason}")]
    CorruptFile { path: String, reason: String },
    #[error("noise signal is silent")]
    SilentNoise,
    #[error("invalid SNR {0} dB")]
    InvalidSnr(f64),
    #[error("utterance too short for feature extraction: {0} samples (need 400)")]
    TooShort(usize),
    #[error("noise split violation: {0}")]
    SplitViolation(String),
    #[error("manifest {path} line {line}: {reason}")]
    Manifest {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Raw (0) or augmented (1) provenance of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugLabel {
    Raw = 0,
    Augmented = 1,
}

impl AugLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: usize,
    pub aug_label: AugLabel,
    pub source_path: String,
}

impl Utterance {
    pub fn new(utt_id: impl Into<String>, samples: Vec<f32>, speaker_id: usize) -> Self {
        Utterance {
            utt_id: utt_id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
            speaker_id,
            aug_label: AugLabel::Raw,
            source_path: String::new(),
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same metadata, different samples.
    pub fn with_samples(&self, samples: Vec<f32>) -> Self {
        Utterance {
            samples,
            ..self.clone()
        }
    }
}
