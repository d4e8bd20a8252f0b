//! Layer-dependent batch normalization.
//!
//! During training every normalization site normalizes by the statistics of
//! the current mini-batch and merges them into a database keyed by the
//! continuous layer time `t`. At inference the statistics are looked up by
//! `t`, interpolating linearly between the two nearest stored times and
//! clamping outside the stored range, so a sample's output never depends on
//! the rest of its batch.

use std::collections::BTreeMap;

use crate::autodiff::{AutodiffError, ChannelStats, Real, Tape, Var};

pub const LBN_EPSILON: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LbnError {
    #[error("no statistics stored for layer {0}")]
    EmptyDatabase(String),
    #[error("layer {layer}: {got} channels, database holds {expected}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One normalization site.
#[derive(Clone, Debug, PartialEq)]
pub struct LbnLayer {
    pub id: String,
    pub channels: usize,
    pub epsilon: f64,
}

impl LbnLayer {
    pub fn new(id: impl Into<String>, channels: usize) -> Self {
        Self {
            id: id.into(),
            channels,
            epsilon: LBN_EPSILON,
        }
    }
}

/// Layer time rounded to six decimal places.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeKey(i64);

impl TimeKey {
    const SCALE: f64 = 1e6;

    pub fn quantize(t: f64) -> Self {
        Self((t * Self::SCALE).round() as i64)
    }

    pub fn time(self) -> f64 {
        self.0 as f64 / Self::SCALE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatRecord {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub count: u64,
}

impl StatRecord {
    fn from_stats(stats: &ChannelStats) -> Self {
        Self {
            mean: stats.mean.iter().map(|&m| m as f32).collect(),
            var: stats.var.iter().map(|&v| v.max(0.0) as f32).collect(),
            count: stats.count.max(1),
        }
    }

    /// Count-weighted running average of means and of variances.
    fn merge(&mut self, stats: &ChannelStats) {
        let (old, new) = (self.count as f64, stats.count as f64);
        let total = old + new;
        for (m, &bm) in self.mean.iter_mut().zip(&stats.mean) {
            *m = ((*m as f64 * old + bm * new) / total) as f32;
        }
        for (v, &bv) in self.var.iter_mut().zip(&stats.var) {
            *v = ((*v as f64 * old + bv.max(0.0) * new) / total) as f32;
        }
        self.count += stats.count;
    }

    fn mean_f64(&self) -> Vec<f64> {
        self.mean.iter().map(|&m| m as f64).collect()
    }

    fn var_f64(&self) -> Vec<f64> {
        self.var.iter().map(|&v| v as f64).collect()
    }
}

/// Per-layer ordered maps from layer time to statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LbnDatabase {
    layers: BTreeMap<String, BTreeMap<TimeKey, StatRecord>>,
}

impl LbnDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Merges batch statistics observed at `t` into `layer`'s map.
    pub fn record(&mut self, layer: &LbnLayer, t: f64, stats: &ChannelStats) -> Result<(), LbnError> {
        if stats.mean.len() != layer.channels {
            return Err(LbnError::ChannelMismatch {
                layer: layer.id.clone(),
                expected: layer.channels,
                got: stats.mean.len(),
            });
        }
        let map = self.layers.entry(layer.id.clone()).or_default();
        map.entry(TimeKey::quantize(t))
            .and_modify(|r| r.merge(stats))
            .or_insert_with(|| StatRecord::from_stats(stats));
        Ok(())
    }

    /// Inserts a record verbatim, replacing any record at the same key.
    pub fn insert(&mut self, layer_id: &str, key: TimeKey, record: StatRecord) {
        self.layers
            .entry(layer_id.to_string())
            .or_default()
            .insert(key, record);
    }

    pub fn layer(&self, layer_id: &str) -> Option<&BTreeMap<TimeKey, StatRecord>> {
        self.layers.get(layer_id)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &BTreeMap<TimeKey, StatRecord>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self, layer_id: &str) -> Vec<TimeKey> {
        self.layers
            .get(layer_id)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.values().all(|m| m.is_empty())
    }

    /// Empties every layer's map.
    pub fn epoch_reset(&mut self) {
        self.layers.clear();
    }

    /// Statistics for `layer` at time `t`: exact key hits return the stored
    /// record, interior points interpolate linearly between the neighbouring
    /// keys and out-of-range queries clamp to the nearest endpoint.
    pub fn interpolate_stats(&self, layer_id: &str, t: f64) -> Result<StatRecord, LbnError> {
        let map = self
            .layers
            .get(layer_id)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| LbnError::EmptyDatabase(layer_id.to_string()))?;
        let key = TimeKey::quantize(t);
        if let Some(rec) = map.get(&key) {
            return Ok(rec.clone());
        }
        let below = map.range(..key).next_back();
        let above = map.range(key..).next();
        Ok(match (below, above) {
            (Some((k1, r1)), Some((k2, r2))) => {
                let w = (key.time() - k1.time()) / (k2.time() - k1.time());
                let lerp = |a: f32, b: f32| ((1.0 - w) * a as f64 + w * b as f64) as f32;
                StatRecord {
                    mean: r1.mean.iter().zip(&r2.mean).map(|(&a, &b)| lerp(a, b)).collect(),
                    var: r1.var.iter().zip(&r2.var).map(|(&a, &b)| lerp(a, b)).collect(),
                    count: r1.count.min(r2.count),
                }
            }
            (Some((_, r)), None) | (None, Some((_, r))) => r.clone(),
            (None, None) => unreachable!("map is non-empty"),
        })
    }
}

/// Training-mode normalization: batch statistics (differentiated) and a
/// database update (not differentiated).
pub fn lbn_train<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    t: f64,
    layer: &LbnLayer,
    db: &mut LbnDatabase,
) -> Result<Var, LbnError> {
    let (y, stats) = tape.batch_norm(x, layer.epsilon)?;
    db.record(layer, t, &stats)?;
    Ok(y)
}

/// Inference-mode normalization by stored statistics only.
pub fn lbn_infer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    t: f64,
    layer: &LbnLayer,
    db: &LbnDatabase,
) -> Result<Var, LbnError> {
    let rec = db.interpolate_stats(&layer.id, t)?;
    if rec.mean.len() != layer.channels {
        return Err(LbnError::ChannelMismatch {
            layer: layer.id.clone(),
            expected: rec.mean.len(),
            got: layer.channels,
        });
    }
    Ok(tape.fixed_norm(x, &rec.mean_f64(), &rec.var_f64(), layer.epsilon)?)
}

/// Conventional inference normalization by the current batch's own
/// statistics; the baseline L-BN replaces.
pub fn naive_bn_infer<T: Real>(tape: &mut Tape<T>, x: Var, layer: &LbnLayer) -> Result<Var, LbnError> {
    Ok(tape.batch_norm(x, layer.epsilon)?.0)
}

/// Where normalization statistics come from during a forward pass.
#[derive(Debug)]
pub enum NormMode<'a> {
    Train(&'a mut LbnDatabase),
    Infer(&'a LbnDatabase),
    Naive,
}

impl NormMode<'_> {
    pub fn apply<T: Real>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        t: f64,
        layer: &LbnLayer,
    ) -> Result<Var, LbnError> {
        match self {
            NormMode::Train(db) => lbn_train(tape, x, t, layer, db),
            NormMode::Infer(db) => lbn_infer(tape, x, t, layer, db),
            NormMode::Naive => naive_bn_infer(tape, x, layer),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, NormMode::Train(_))
    }
}
