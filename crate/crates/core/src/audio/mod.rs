//! One-second 16 kHz clips: WAV decoding, training-time augmentation and
//! MFCC extraction.

mod augment;
mod mfcc;
mod wav;

pub use augment::{augment, AugmentConfig};
pub use mfcc::{compute_mfcc, mel_band_centers, FeatureMatrix, MfccConfig, MfccExtractor};
pub use wav::{load_wav, read_wav_samples, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SAMPLES: usize = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unsupported audio format in {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Exactly one second of mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmClip {
    samples: Vec<f32>,
}

impl PcmClip {
    /// Zero-pads or truncates to one second and clamps to `[-1, 1]`.
    pub fn from_samples(mut samples: Vec<f32>) -> Self {
        samples.resize(CLIP_SAMPLES, 0.0);
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Self { samples }
    }

    pub fn silent() -> Self {
        Self {
            samples: vec![0.0; CLIP_SAMPLES],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}
