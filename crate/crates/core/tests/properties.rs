use kws_ode::autodiff::{ChannelStats, Tape, Tensor};
use kws_ode::checkpoint::{config_digest, Checkpoint};
use kws_ode::dataset::{label_of, KEYWORDS};
use kws_ode::lbn::{LbnDatabase, LbnLayer};
use kws_ode::models::{Model, ModelSpec, Variant};
use kws_ode::ode::{dopri5_solve, FnSystem, OdeConfig};
use kws_ode::train::{lr_at, TrainConfig};
use proptest::prelude::*;

fn tensor(dims: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(dims.to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_length(l in 1usize..40, c_in in 1usize..4, c_out in 1usize..4,
                          m in 1usize..8, stride in 1usize..4, padding in 0usize..4) {
        prop_assume!(l + 2 * padding >= m);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[l, c_in]));
        let k = t.leaf(Tensor::zeros(&[m, c_in, c_out]));
        let y = t.conv_temporal(x, k, stride, padding).unwrap();
        prop_assert_eq!(t.value(y).dims(), &[(l + 2 * padding - m) / stride + 1, c_out]);
    }

    #[test]
    fn pool_output_length(l in 1usize..60, c in 1usize..4, window in 1usize..10, stride in 1usize..6) {
        prop_assume!(window <= l);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[2, l, c]));
        let y = t.avg_pool_temporal(x, window, stride).unwrap();
        prop_assert_eq!(t.value(y).dims(), &[2, (l - window) / stride + 1, c]);
    }

    #[test]
    fn conv_is_linear(xs in prop::collection::vec(-1.0f64..1.0, 24), ys in prop::collection::vec(-1.0f64..1.0, 24),
                      ks in prop::collection::vec(-1.0f64..1.0, 18), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut t = Tape::<f64>::new();
        let k = t.leaf(tensor(&[3, 3, 2], ks));
        let x = t.leaf(tensor(&[8, 3], xs.clone()));
        let y = t.leaf(tensor(&[8, 3], ys.clone()));
        let mix: Vec<f64> = xs.iter().zip(&ys).map(|(p, q)| a * p + b * q).collect();
        let z = t.leaf(tensor(&[8, 3], mix));
        let cx = t.conv_temporal(x, k, 1, 1).unwrap();
        let cy = t.conv_temporal(y, k, 1, 1).unwrap();
        let cz = t.conv_temporal(z, k, 1, 1).unwrap();
        for ((p, q), r) in t.value(cx).data().iter().zip(t.value(cy).data()).zip(t.value(cz).data()) {
            prop_assert!((a * p + b * q - r).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_sandwiched(m1 in -5.0f32..5.0, m2 in -5.0f32..5.0, v1 in 0.0f32..3.0, v2 in 0.0f32..3.0,
                                   t1 in 0.0f64..0.5, gap in 0.01f64..0.5, q in -1.0f64..2.0) {
        let layer = LbnLayer::new("l", 1);
        let mut db = LbnDatabase::new();
        let t2 = t1 + gap;
        let stats = |m: f32, v: f32| ChannelStats { mean: vec![m as f64], var: vec![v as f64], count: 10 };
        db.record(&layer, t1, &stats(m1, v1)).unwrap();
        db.record(&layer, t2, &stats(m2, v2)).unwrap();
        let tq = t1 + q * gap;
        let r = db.interpolate_stats("l", tq).unwrap();
        let within = |x: f32, a: f32, b: f32| x >= a.min(b) - 1e-5 && x <= a.max(b) + 1e-5;
        prop_assert!(within(r.mean[0], m1, m2));
        prop_assert!(within(r.var[0], v1, v2));
        if tq < t1 - 1e-6 {
            prop_assert_eq!(r.mean[0], db.interpolate_stats("l", t1).unwrap().mean[0]);
        }
        if tq > t2 + 1e-6 {
            prop_assert_eq!(r.mean[0], db.interpolate_stats("l", t2).unwrap().mean[0]);
        }
    }

    #[test]
    fn merge_is_order_insensitive(batches in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0, 1u64..100), 1..8)) {
        let layer = LbnLayer::new("l", 1);
        let mut fwd = LbnDatabase::new();
        let mut rev = LbnDatabase::new();
        for &(m, v, c) in &batches {
            fwd.record(&layer, 0.25, &ChannelStats { mean: vec![m], var: vec![v], count: c }).unwrap();
        }
        for &(m, v, c) in batches.iter().rev() {
            rev.record(&layer, 0.25, &ChannelStats { mean: vec![m], var: vec![v], count: c }).unwrap();
        }
        let (a, b) = (fwd.interpolate_stats("l", 0.25).unwrap(), rev.interpolate_stats("l", 0.25).unwrap());
        prop_assert_eq!(a.count, b.count);
        prop_assert!((a.mean[0] - b.mean[0]).abs() < 1e-4);
        prop_assert!((a.var[0] - b.var[0]).abs() < 1e-4);
        let total: u64 = batches.iter().map(|b| b.2).sum();
        let exact: f64 = batches.iter().map(|&(m, _, c)| m * c as f64).sum::<f64>() / total as f64;
        prop_assert!((a.mean[0] as f64 - exact).abs() < 1e-4);
    }

    #[test]
    fn nfe_formula(rate in 0.1f64..5.0, tol in 1e-7f64..0.5) {
        let mut sys = FnSystem::new(move |y: &[f64], _t| y.iter().map(|v| -rate * v).collect());
        let r = dopri5_solve(&mut sys, &vec![1.0, -0.5], &OdeConfig::new(tol, 1.0)).unwrap();
        prop_assert_eq!(r.nfe, 1 + 6 * (r.accepted_steps + r.rejected_steps));
    }

    #[test]
    fn lr_schedule_is_monotone(step in 0u64..20_000) {
        let cfg = TrainConfig::for_variant(Variant::OdeTcnn20, 0);
        prop_assert!(lr_at(step + 1, &cfg) <= lr_at(step, &cfg));
    }

    #[test]
    fn label_is_total(word in "[a-z_]{0,10}") {
        let l = label_of(&word).index();
        prop_assert!(l <= 10);
        prop_assert_eq!(l < 10, KEYWORDS.contains(&word.as_str()));
    }

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, epoch in 0u32..100,
                             times in prop::collection::btree_set(0u32..1_000_000, 1..6)) {
        let mut model = Model::build(ModelSpec::new(Variant::OdeTcnn20), seed);
        let layer = LbnLayer::new("ode.bn2", 20);
        for (i, &t) in times.iter().enumerate() {
            let stats = ChannelStats {
                mean: (0..20).map(|c| (c + i) as f64 * 0.37).collect(),
                var: (0..20).map(|c| 0.1 + c as f64).collect(),
                count: 64 + i as u64,
            };
            model.db.record(&layer, t as f64 * 1e-6, &stats).unwrap();
        }
        let c = Checkpoint { config_digest: config_digest(model.spec(), "p"), model, epoch };
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn lr_schedule_discontinuities() {
    for variant in Variant::ALL {
        let cfg = TrainConfig::for_variant(variant, 0);
        let jumps = (0..20_000u64).filter(|&s| lr_at(s + 1, &cfg) != lr_at(s, &cfg)).count();
        assert_eq!(jumps, cfg.decay_steps.len());
    }
}

#[test]
fn exactly_twelve_labels() {
    use kws_ode::dataset::{LabelId, CORPUS_WORDS};
    let mut seen: std::collections::BTreeSet<usize> = CORPUS_WORDS.iter().map(|w| label_of(w).index()).collect();
    seen.insert(LabelId::SILENCE.index());
    assert_eq!(seen.len(), 12);
}
