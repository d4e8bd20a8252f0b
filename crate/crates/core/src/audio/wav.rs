use std::path::Path;

use super::{AudioError, PcmClip, SAMPLE_RATE};

fn map_err(path: &Path, e: hound::Error) -> AudioError {
    let path = path.display().to_string();
    match e {
        hound::Error::IoError(source) => AudioError::Io { path, source },
        other => AudioError::Format {
            path,
            detail: other.to_string(),
        },
    }
}

/// Reads every sample of a 16-bit mono 16 kHz PCM file, scaled by 1/32768.
pub fn read_wav_samples(path: &Path) -> Result<Vec<f32>, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    let format_err = |detail: String| AudioError::Format {
        path: path.display().to_string(),
        detail,
    };
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(format_err(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format_err(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0).map_err(|e| map_err(path, e)))
        .collect()
}

/// Loads a one-second clip: shorter files are zero-padded at the end, longer
/// files keep their first 16000 samples.
pub fn load_wav(path: &Path) -> Result<PcmClip, AudioError> {
    read_wav_samples(path).map(PcmClip::from_samples)
}

/// Writes samples in `[-1, 1]` as 16-bit mono 16 kHz PCM.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_err(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_err(path, e))
}
