//! Deterministic stand-in corpus in the Speech Commands v0.01 layout.
//!
//! Each word is a fixed sequence of voiced (formant-shaped harmonic) and
//! fricative (band noise) segments. Speakers vary pitch, vocal-tract
//! scale, tempo and loudness; every utterance adds onset and formant jitter
//! plus a low noise floor. Speakers are assigned to validation and test by
//! hashing their id, as in the original corpus.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{derive_seed, DatasetError, NOISE_DIR, TESTING_LIST, VALIDATION_LIST};
use crate::audio::{write_wav, CLIP_SAMPLES, SAMPLE_RATE};

/// The 30 words of the v0.01 corpus.
pub const CORPUS_WORDS: [&str; 30] = [
    "bed", "bird", "cat", "dog", "down", "eight", "five", "four", "go", "happy", "house", "left", "marvin", "nine",
    "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop", "three", "tree", "two", "up", "wow", "yes",
    "zero",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub speakers: usize,
    pub words: Vec<String>,
    /// Probability that a speaker recorded a given word.
    pub coverage: f64,
    pub validation_pct: f64,
    pub testing_pct: f64,
    pub noise_seconds: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            speakers: 400,
            words: CORPUS_WORDS.iter().map(|s| s.to_string()).collect(),
            coverage: 1.0,
            validation_pct: 10.0,
            testing_pct: 10.0,
            noise_seconds: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSummary {
    pub utterances: usize,
    pub validation: usize,
    pub testing: usize,
    pub noise_files: usize,
}

fn hash_u64(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug)]
enum Segment {
    Voiced { formants: [f64; 3], weight: f64 },
    Fricative { lo: f64, hi: f64, weight: f64 },
}

impl Segment {
    fn weight(&self) -> f64 {
        match self {
            Segment::Voiced { weight, .. } | Segment::Fricative { weight, .. } => *weight,
        }
    }
}

fn word_template(word: &str) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64(word));
    let n = rng.gen_range(2..=4);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.25) {
                let lo = rng.gen_range(1500.0..4500.0);
                Segment::Fricative {
                    lo,
                    hi: lo + rng.gen_range(800.0..2500.0),
                    weight: rng.gen_range(0.4..0.8),
                }
            } else {
                Segment::Voiced {
                    formants: [
                        rng.gen_range(250.0..900.0),
                        rng.gen_range(900.0..2400.0),
                        rng.gen_range(2400.0..3400.0),
                    ],
                    weight: rng.gen_range(0.6..1.4),
                }
            }
        })
        .collect()
}

struct Speaker {
    f0: f64,
    tract: f64,
    tempo: f64,
    loudness: f64,
}

fn speaker(seed: u64, id: usize) -> Speaker {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, id as u64, 0x5EA]));
    Speaker {
        f0: rng.gen_range(90.0..230.0),
        tract: rng.gen_range(0.9..1.1),
        tempo: rng.gen_range(0.8..1.2),
        loudness: rng.gen_range(0.15..0.6),
    }
}

fn resonance(f: f64, formant: f64) -> f64 {
    let bw = 60.0 + 0.06 * formant;
    1.0 / (1.0 + ((f - formant) / bw).powi(2))
}

fn synthesize(template: &[Segment], spk: &Speaker, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let total_w: f64 = template.iter().map(Segment::weight).sum();
    let dur = (0.55 * spk.tempo * rng.gen_range(0.9..1.1)).min(0.9);
    let n = (dur * sr) as usize;
    let onset = rng.gen_range(0..=CLIP_SAMPLES - n);
    let jitter: Vec<f64> = (0..template.len() * 3).map(|_| rng.gen_range(0.97..1.03)).collect();
    let f0 = spk.f0 * rng.gen_range(0.95..1.05);
    let mut out = vec![0.0f32; CLIP_SAMPLES];
    let n_harm = (4000.0 / f0) as usize;
    let mut phases = vec![0.0f64; n_harm];
    let fric_tones: Vec<(f64, f64)> = (0..24).map(|_| (rng.gen::<f64>(), rng.gen_range(0.0..2.0 * PI))).collect();

    let mut start = 0usize;
    for (s, seg) in template.iter().enumerate() {
        let len = ((seg.weight() / total_w) * n as f64) as usize;
        let end = if s + 1 == template.len() { n } else { start + len };
        let ramp = ((end - start) / 6).max(1);
        for i in start..end {
            let env = ((i - start).min(end - 1 - i) as f64 / ramp as f64).min(1.0);
            let env = 0.5 - 0.5 * (PI * env).cos();
            let t = i as f64 / sr;
            let v = match seg {
                Segment::Voiced { formants, .. } => {
                    let fm: Vec<f64> = formants
                        .iter()
                        .enumerate()
                        .map(|(k, f)| f * spk.tract * jitter[s * 3 + k])
                        .collect();
                    let mut acc = 0.0;
                    for (h, ph) in phases.iter_mut().enumerate() {
                        let fh = f0 * (h + 1) as f64;
                        *ph += 2.0 * PI * fh / sr;
                        let g: f64 = fm.iter().map(|&f| resonance(fh, f)).sum();
                        acc += g * ph.sin();
                    }
                    acc * 0.25
                }
                Segment::Fricative { lo, hi, .. } => {
                    let (lo, hi) = (lo * spk.tract, hi * spk.tract);
                    fric_tones
                        .iter()
                        .map(|&(u, p)| (2.0 * PI * (lo + u * (hi - lo)) * t + p).sin())
                        .sum::<f64>()
                        * 0.08
                }
            };
            out[onset + i] = (v * env * spk.loudness) as f32;
        }
        start = end;
    }
    let floor = rng.gen_range(0.001..0.006);
    for o in &mut out {
        *o += (floor * (rng.gen::<f64>() * 2.0 - 1.0)) as f32;
    }
    out
}

fn noise_recording(kind: usize, seconds: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = seconds * SAMPLE_RATE as usize;
    let mut white = || rng.gen::<f64>() * 2.0 - 1.0;
    let samples: Vec<f64> = match kind {
        0 => (0..n).map(|_| 0.3 * white()).collect(),
        1 => {
            // Pink noise, Paul Kellet's economy filter.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    0.08 * (b0 + b1 + b2 + w * 0.1848)
                })
                .collect()
        }
        2 => {
            let mut b = 0.0;
            (0..n)
                .map(|_| {
                    b = 0.995 * b + 0.05 * white();
                    b
                })
                .collect()
        }
        _ => (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                0.1 * (2.0 * PI * 60.0 * t).sin() + 0.05 * (2.0 * PI * 180.0 * t).sin() + 0.05 * white()
            })
            .collect(),
    };
    samples.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

const NOISE_NAMES: [&str; 4] = ["white_noise.wav", "pink_noise.wav", "brown_noise.wav", "hum.wav"];

/// Writes a synthetic corpus under `root`.
pub fn generate_corpus(root: &Path, cfg: &SynthConfig) -> Result<CorpusSummary, DatasetError> {
    if cfg.speakers == 0 || cfg.words.is_empty() {
        return Err(DatasetError::Config("need at least one speaker and one word".into()));
    }
    if !(0.0..=1.0).contains(&cfg.coverage) || cfg.validation_pct + cfg.testing_pct > 100.0 {
        return Err(DatasetError::Config("coverage or split percentages out of range".into()));
    }
    let noise_dir = root.join(NOISE_DIR);
    fs::create_dir_all(&noise_dir).map_err(|e| DatasetError::io(&noise_dir, e))?;
    for (k, name) in NOISE_NAMES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x401, k as u64]));
        write_wav(&noise_dir.join(name), &noise_recording(k, cfg.noise_seconds, &mut rng))?;
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.speakers)
        .flat_map(|s| (0..cfg.words.len()).map(move |w| (s, w)))
        .filter(|&(s, w)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, s as u64, w as u64, 0xC0]));
            rng.gen_bool(cfg.coverage)
        })
        .collect();
    for w in &cfg.words {
        let d = root.join(w);
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }
    let templates: Vec<Vec<Segment>> = cfg.words.iter().map(|w| word_template(w)).collect();
    let rels: Vec<String> = jobs
        .par_iter()
        .map(|&(s, w)| {
            let spk_name = format!("{:08x}", hash_u64(&format!("{}-{s}", cfg.seed)) as u32);
            let rel = format!("{}/{spk_name}_nohash_0.wav", cfg.words[w]);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, s as u64, w as u64]));
            let audio = synthesize(&templates[w], &speaker(cfg.seed, s), &mut rng);
            write_wav(&root.join(&rel), &audio)?;
            Ok(rel)
        })
        .collect::<Result<_, DatasetError>>()?;

    let (mut val, mut test) = (String::new(), String::new());
    let (mut n_val, mut n_test) = (0, 0);
    for rel in &rels {
        let spk = rel.split('/').nth(1).and_then(|f| f.split("_nohash_").next()).unwrap_or_default();
        let pct = (hash_u64(spk) % 10_000) as f64 / 100.0;
        if pct < cfg.validation_pct {
            val.push_str(rel);
            val.push('\n');
            n_val += 1;
        } else if pct < cfg.validation_pct + cfg.testing_pct {
            test.push_str(rel);
            test.push('\n');
            n_test += 1;
        }
    }
    for (name, text) in [(VALIDATION_LIST, val), (TESTING_LIST, test)] {
        let p = root.join(name);
        fs::write(&p, text).map_err(|e| DatasetError::io(&p, e))?;
    }
    Ok(CorpusSummary {
        utterances: rels.len(),
        validation: n_val,
        testing: n_test,
        noise_files: NOISE_NAMES.len(),
    })
}
