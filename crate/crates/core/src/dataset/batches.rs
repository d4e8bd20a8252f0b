use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, DatasetError, DatasetIndex, Entry, Source, Split};
use crate::audio::{augment, load_wav, read_wav_samples, AugmentConfig, MfccConfig, MfccExtractor, PcmClip};

/// Row-major `len × 101 × 40` features with aligned labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    per_sample: usize,
}

impl Batch {
    /// Builds a batch from per-sample feature vectors of equal length.
    pub fn new(features: &[Vec<f32>], labels: Vec<usize>) -> Result<Self, DatasetError> {
        let per_sample = features.first().map_or(0, Vec::len);
        if features.is_empty() || features.len() != labels.len() || per_sample == 0 {
            return Err(DatasetError::Config(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|f| f.len() != per_sample) {
            return Err(DatasetError::Config("feature rows differ in length".into()));
        }
        Ok(Self {
            features: features.concat(),
            labels,
            per_sample,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.per_sample..(i + 1) * self.per_sample]
    }

    pub fn samples(&self) -> Vec<&[f32]> {
        self.features.chunks_exact(self.per_sample).collect()
    }
}

type FeatureCache = Arc<Vec<Vec<f32>>>;

/// An index together with the loaded noise recordings and feature
/// extractor. Features of non-augmented passes are cached per split.
pub struct Dataset {
    index: DatasetIndex,
    noise: Vec<Vec<f32>>,
    extractor: MfccExtractor,
    cache: Mutex<HashMap<Split, FeatureCache>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("root", &self.index.root)
            .field("entries", &self.index.entries.len())
            .finish()
    }
}

impl Dataset {
    pub fn new(index: DatasetIndex) -> Result<Self, DatasetError> {
        let noise = index
            .noise_files
            .iter()
            .map(|p| read_wav_samples(&index.root.join(p)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            index,
            noise,
            extractor: MfccExtractor::new(MfccConfig::default())?,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn noise(&self) -> &[Vec<f32>] {
        &self.noise
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.index.split_len(split)
    }

    /// The raw one-second clip an entry refers to.
    pub fn clip(&self, entry: &Entry) -> Result<PcmClip, DatasetError> {
        match &entry.source {
            Source::Clip(rel) => Ok(load_wav(&self.index.root.join(rel))?),
            Source::Silence { noise, offset, scale } => {
                let rec = self
                    .noise
                    .get(*noise)
                    .ok_or_else(|| DatasetError::Config(format!("noise file {noise} out of range")))?;
                Ok(PcmClip::from_samples(
                    rec.iter().skip(*offset).take(crate::audio::CLIP_SAMPLES).map(|v| v * scale).collect(),
                ))
            }
        }
    }

    fn features_of(&self, entry: &Entry, aug: Option<(&AugmentConfig, u64)>) -> Result<Vec<f32>, DatasetError> {
        let clip = self.clip(entry)?;
        let clip = match aug {
            Some((cfg, seed)) => augment(&clip, &self.noise, cfg, &mut ChaCha8Rng::seed_from_u64(seed))?,
            None => clip,
        };
        Ok(self.extractor.compute(&clip).values)
    }

    /// Features of every entry of `split` in index order, computed once.
    pub fn cached_features(&self, split: Split) -> Result<FeatureCache, DatasetError> {
        if let Some(c) = self.cache.lock().expect("cache lock").get(&split) {
            return Ok(c.clone());
        }
        let entries: Vec<&Entry> = self.index.split(split).collect();
        let feats: Vec<Vec<f32>> = entries
            .par_iter()
            .map(|e| self.features_of(e, None))
            .collect::<Result<_, _>>()?;
        let feats = Arc::new(feats);
        self.cache.lock().expect("cache lock").insert(split, feats.clone());
        Ok(feats)
    }

    /// Labels of `split` in index order.
    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.index.split(split).map(|e| e.label.index()).collect()
    }

    /// One epoch of mini-batches over `split`. Every entry is visited once
    /// and the final batch may be short. Shuffling and augmentation are
    /// deterministic functions of `(seed, epoch)`.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        shuffle: bool,
        seed: u64,
        epoch: u64,
        augmenting: Option<&AugmentConfig>,
    ) -> Result<Batches<'_>, DatasetError> {
        if batch_size == 0 {
            return Err(DatasetError::Config("batch size must be at least 1".into()));
        }
        let entries: Vec<&Entry> = self.index.split(split).collect();
        if entries.is_empty() {
            return Err(DatasetError::EmptySplit(split));
        }
        let mut order: Vec<usize> = (0..entries.len()).collect();
        if shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, split.ordinal()]));
            order.shuffle(&mut rng);
        }
        let cached = match augmenting {
            None => Some(self.cached_features(split)?),
            Some(_) => None,
        };
        Ok(Batches {
            ds: self,
            entries,
            order,
            pos: 0,
            batch_size,
            seed,
            epoch,
            augmenting: augmenting.cloned(),
            cached,
        })
    }
}

pub struct Batches<'a> {
    ds: &'a Dataset,
    entries: Vec<&'a Entry>,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    augmenting: Option<AugmentConfig>,
    cached: Option<FeatureCache>,
}

impl Batches<'_> {
    /// Number of batches in the epoch.
    pub fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn make(&self, slots: &[usize], first: usize) -> Result<Batch, DatasetError> {
        let feats: Vec<Vec<f32>> = match (&self.cached, &self.augmenting) {
            (Some(cache), _) => slots.iter().map(|&i| cache[i].clone()).collect(),
            (None, aug) => slots
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = derive_seed(&[self.seed, self.epoch, (first + k) as u64, 0xA5]);
                    self.ds.features_of(self.entries[i], aug.as_ref().map(|a| (a, s)))
                })
                .collect::<Result<_, _>>()?,
        };
        let per_sample = feats[0].len();
        Ok(Batch {
            features: feats.concat(),
            labels: slots.iter().map(|&i| self.entries[i].label.index()).collect(),
            per_sample,
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let first = self.pos;
        self.pos = end;
        Some(self.make(&self.order[first..end], first))
    }
}
