use std::f64::consts::PI;

use kws_ode::audio::{compute_mfcc, MfccConfig, PcmClip, CLIP_SAMPLES};

#[test]
fn matches_numpy_reference() {
    let text = include_str!("fixtures/mfcc_reference.csv");
    let reference: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let samples = (0..CLIP_SAMPLES)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            (0.5 * (2.0 * PI * 1000.0 * t).sin() + 0.25 * (2.0 * PI * 3100.0 * t).sin()) as f32
        })
        .collect();
    let m = compute_mfcc(&PcmClip::from_samples(samples), &MfccConfig::default()).unwrap();
    assert_eq!(reference.len(), m.frames);
    let mut worst = 0.0f64;
    for (f, row) in reference.iter().enumerate() {
        assert_eq!(row.len(), m.coeffs);
        for (k, &r) in row.iter().enumerate() {
            worst = worst.max((m.get(f, k) as f64 - r).abs());
        }
    }
    assert!(worst < 1e-3, "max abs deviation {worst}");
}
