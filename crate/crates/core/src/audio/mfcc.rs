use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioError, PcmClip, CLIP_SAMPLES, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub window_ms: u32,
    pub stride_ms: u32,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fft_size: usize,
    pub log_floor: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window_ms: 30,
            stride_ms: 10,
            n_mels: 40,
            n_mfcc: 40,
            fft_size: 512,
            log_floor: 1e-10,
            f_min: 20.0,
            f_max: 8000.0,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE / 1000) as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.stride_ms * SAMPLE_RATE / 1000) as usize
    }

    pub fn frames(&self) -> usize {
        1 + CLIP_SAMPLES / self.hop_samples()
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::Config(m));
        if !(self.window_ms > self.stride_ms && self.stride_ms > 0) {
            return bad("need window_ms > stride_ms > 0".into());
        }
        if self.n_mfcc > self.n_mels || self.n_mels == 0 {
            return bad(format!("n_mfcc {} must not exceed n_mels {}", self.n_mfcc, self.n_mels));
        }
        if self.fft_size < self.window_samples() {
            return bad(format!(
                "fft_size {} shorter than window {}",
                self.fft_size,
                self.window_samples()
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= SAMPLE_RATE as f64 / 2.0) {
            return bad("need 0 ≤ f_min < f_max ≤ Nyquist".into());
        }
        Ok(())
    }
}

/// `frames × coeffs` cepstral features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f32>,
    pub frames: usize,
    pub coeffs: usize,
}

impl FeatureMatrix {
    pub fn get(&self, frame: usize, coeff: usize) -> f32 {
        self.values[frame * self.coeffs + coeff]
    }

    pub fn frame(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.coeffs..(frame + 1) * self.coeffs]
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    if f < 1000.0 {
        f / F_SP
    } else {
        15.0 + (f / 1000.0).ln() / (6.4f64.ln() / 27.0)
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    if m < 15.0 {
        m * F_SP
    } else {
        1000.0 * ((6.4f64.ln() / 27.0) * (m - 15.0)).exp()
    }
}

/// Area-normalized triangular filters, `n_mels × (fft_size / 2 + 1)`.
fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let rise = (f - left) / (center - left);
                    let fall = (right - f) / (right - center);
                    rise.min(fall).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

/// Center frequencies of the mel bands in Hz.
pub fn mel_band_centers(cfg: &MfccConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Precomputed window, filterbank, cosine basis and FFT plan.
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self, AudioError> {
        cfg.validate()?;
        let n = cfg.window_samples();
        // Periodic Hann.
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg);
        let m = cfg.n_mels as f64;
        let dct = (0..cfg.n_mfcc)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels)
                    .map(|j| scale * (PI * k as f64 * (2.0 * j as f64 + 1.0) / (2.0 * m)).cos())
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Log mel energies per frame, before the cosine transform.
    pub fn log_mel(&self, clip: &PcmClip) -> Vec<Vec<f64>> {
        let win = self.cfg.window_samples();
        let hop = self.cfg.hop_samples();
        let pad = win / 2;
        let x = clip.samples();
        // Reflect padding without repeating the edge sample.
        let padded: Vec<f64> = (0..x.len() + 2 * pad)
            .map(|i| {
                let j = i as i64 - pad as i64;
                let n = x.len() as i64;
                let r = if j < 0 {
                    -j
                } else if j >= n {
                    2 * (n - 1) - j
                } else {
                    j
                };
                x[r as usize] as f64
            })
            .collect();
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        (0..self.cfg.frames())
            .map(|f| {
                let start = f * hop;
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for (i, (&s, &w)) in padded[start..start + win].iter().zip(&self.window).enumerate() {
                    buf[i].re = s * w;
                }
                self.fft.process(&mut buf);
                let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
                self.filters
                    .iter()
                    .map(|filt| {
                        let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                        e.max(self.cfg.log_floor).ln()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn compute(&self, clip: &PcmClip) -> FeatureMatrix {
        let log_mel = self.log_mel(clip);
        let coeffs = self.cfg.n_mfcc;
        let mut values = Vec::with_capacity(log_mel.len() * coeffs);
        for frame in &log_mel {
            for basis in &self.dct {
                let c: f64 = basis.iter().zip(frame).map(|(a, b)| a * b).sum();
                values.push(c as f32);
            }
        }
        FeatureMatrix {
            frames: log_mel.len(),
            coeffs,
            values,
        }
    }
}

/// One-shot MFCC computation; build an [`MfccExtractor`] to amortize setup.
pub fn compute_mfcc(clip: &PcmClip, cfg: &MfccConfig) -> Result<FeatureMatrix, AudioError> {
    Ok(MfccExtractor::new(cfg.clone())?.compute(clip))
}
