use rand::Rng;

use super::{AudioError, PcmClip, CLIP_SAMPLES, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub timeshift_ms: u32,
    pub noise_prob: f64,
    pub noise_scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            timeshift_ms: 100,
            noise_prob: 0.8,
            noise_scale_max: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            timeshift_ms: 0,
            noise_prob: 0.0,
            noise_scale_max: 0.0,
        }
    }
}

/// Random time shift with zero fill, then (with probability `noise_prob`) a
/// random one-second crop of a random noise recording scaled by
/// `U[0, noise_scale_max]` is mixed in. The result is clamped to `[-1, 1]`.
pub fn augment<R: Rng>(
    clip: &PcmClip,
    noise_pool: &[Vec<f32>],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<PcmClip, AudioError> {
    if !(0.0..=1.0).contains(&cfg.noise_prob) {
        return Err(AudioError::Config(format!(
            "noise_prob {} outside [0, 1]",
            cfg.noise_prob
        )));
    }
    if cfg.noise_prob > 0.0 && noise_pool.is_empty() {
        return Err(AudioError::Config("noise_prob > 0 needs a non-empty noise pool".into()));
    }
    let max_shift = (cfg.timeshift_ms as i64 * SAMPLE_RATE as i64) / 1000;
    let shift = rng.gen_range(-max_shift..=max_shift);
    let src = clip.samples();
    let mut out = vec![0.0f32; CLIP_SAMPLES];
    for (i, o) in out.iter_mut().enumerate() {
        let j = i as i64 - shift;
        if (0..CLIP_SAMPLES as i64).contains(&j) {
            *o = src[j as usize];
        }
    }
    if rng.gen::<f64>() < cfg.noise_prob {
        let noise = &noise_pool[rng.gen_range(0..noise_pool.len())];
        let crop = crop_second(noise, rng);
        let scale = rng.gen_range(0.0..=cfg.noise_scale_max) as f32;
        for (o, n) in out.iter_mut().zip(crop) {
            *o += scale * n;
        }
    }
    Ok(PcmClip::from_samples(out))
}

/// A uniformly placed one-second window of `noise`, zero-padded if the
/// recording is shorter.
fn crop_second<R: Rng>(noise: &[f32], rng: &mut R) -> Vec<f32> {
    let start = if noise.len() > CLIP_SAMPLES {
        rng.gen_range(0..=noise.len() - CLIP_SAMPLES)
    } else {
        0
    };
    let mut crop: Vec<f32> = noise[start..].iter().take(CLIP_SAMPLES).copied().collect();
    crop.resize(CLIP_SAMPLES, 0.0);
    crop
}
