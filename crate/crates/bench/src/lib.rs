//! Deterministic inputs shared by the benchmarks.

use std::f32::consts::TAU;

use kws_ode::audio::{compute_mfcc, MfccConfig, PcmClip, CLIP_SAMPLES, SAMPLE_RATE};
use kws_ode::autodiff::Tape;
use kws_ode::models::{Model, ModelSpec, Solver, Variant};

/// One second of a two-tone signal with a slow amplitude envelope.
pub fn tone_clip(f0: f32) -> PcmClip {
    let samples = (0..CLIP_SAMPLES)
        .map(|n| {
            let t = n as f32 / SAMPLE_RATE as f32;
            let env = (TAU * 1.5 * t).sin().abs();
            env * (0.5 * (TAU * f0 * t).sin() + 0.2 * (TAU * 2.7 * f0 * t).sin())
        })
        .collect();
    PcmClip::from_samples(samples)
}

/// Flattened MFCC matrices of `n` tone clips.
pub fn features(n: usize) -> Vec<Vec<f32>> {
    let cfg = MfccConfig::default();
    (0..n)
        .map(|i| compute_mfcc(&tone_clip(180.0 + 37.0 * i as f32), &cfg).expect("valid config").values)
        .collect()
}

/// A freshly initialized model whose L-BN database has been filled by a few
/// training-mode passes.
pub fn warmed_model(variant: Variant) -> Model<f32> {
    let mut model = Model::build(ModelSpec::new(variant), 0);
    let feats = features(16);
    let rows: Vec<&[f32]> = feats.iter().map(|f| f.as_slice()).collect();
    for _ in 0..2 {
        let mut tape = Tape::new();
        model
            .forward_train(&mut tape, &rows, &Solver::Adaptive { tolerance: model.spec().train_tolerance })
            .expect("forward pass");
    }
    model
}
