use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, label_of, DatasetError, LabelId, Split, KEYWORDS, NOISE_DIR, TESTING_LIST, VALIDATION_LIST};
use crate::audio::{read_wav_samples, CLIP_SAMPLES};

#[derive(Clone, Debug, PartialEq)]
pub struct IndexConfig {
    pub seed: u64,
    /// Keywords kept as their own classes; every other word is unknown.
    pub keywords: Vec<String>,
    /// Unknown entries per split, as a percentage of its keyword entries.
    pub unknown_pct: f64,
    /// Silence entries per split, as a percentage of its keyword entries.
    pub silence_pct: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
            unknown_pct: 10.0,
            silence_pct: 10.0,
        }
    }
}

impl IndexConfig {
    pub fn with_subset(seed: u64, keywords: &[&str]) -> Self {
        Self {
            seed,
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.keywords.is_empty() {
            return Err(DatasetError::Config("keyword subset is empty".into()));
        }
        for k in &self.keywords {
            if !KEYWORDS.contains(&k.as_str()) {
                return Err(DatasetError::Config(format!("{k:?} is not one of the ten keywords")));
            }
        }
        for (name, pct) in [("unknown", self.unknown_pct), ("silence", self.silence_pct)] {
            if !(0.0..=100.0).contains(&pct) {
                return Err(DatasetError::Config(format!("{name} percentage {pct} outside [0, 100]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// Path relative to the dataset root.
    Clip(PathBuf),
    /// A one-second crop of background noise file `noise`, scaled.
    Silence { noise: usize, offset: usize, scale: f32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub source: Source,
    pub label: LabelId,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
    /// Relative paths of the background noise recordings.
    pub noise_files: Vec<PathBuf>,
    pub config: IndexConfig,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Entry counts per label for one split.
    pub fn histogram(&self, split: Split) -> [usize; LabelId::COUNT] {
        let mut h = [0; LabelId::COUNT];
        for e in self.split(split) {
            h[e.label.index()] += 1;
        }
        h
    }

    /// Human-readable split sizes and class histogram.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for split in Split::ALL {
            s.push_str(&format!("{:<10} {:>6}\n", split.name(), self.split_len(split)));
        }
        s.push_str(&format!("{:<10} {:>6} {:>10} {:>6}\n", "class", "train", "validation", "test"));
        let hs: Vec<_> = Split::ALL.iter().map(|&sp| self.histogram(sp)).collect();
        for i in 0..LabelId::COUNT {
            let label = LabelId::new(i).expect("in range");
            s.push_str(&format!("{:<10} {:>6} {:>10} {:>6}\n", label.name(), hs[0][i], hs[1][i], hs[2][i]));
        }
        s.push_str(&format!("noise files {}\n", self.noise_files.len()));
        s
    }
}

fn read_list(root: &Path, name: &str) -> Result<HashSet<String>, DatasetError> {
    let path = root.join(name);
    if !path.is_file() {
        return Err(DatasetError::Layout(format!("missing {}", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().replace('\\', "/"))
        .filter(|l| !l.is_empty())
        .collect())
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| DatasetError::io(path, e))?
        .map(|d| d.map(|d| d.path()).map_err(|e| DatasetError::io(path, e)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn ratio_count(pct: f64, n: usize) -> usize {
    (pct * n as f64 / 100.0).ceil() as usize
}

/// Indexes a Speech Commands v0.01 style directory.
///
/// Utterances listed in `validation_list.txt` / `testing_list.txt` go to
/// those splits, the rest to train. Per split, unknown entries are sampled
/// uniformly from the non-keyword words and silence entries are random
/// one-second noise crops scaled by `U[0, 1]`; both number
/// `ceil(pct% × keyword entries)`.
pub fn build_index(root: &Path, cfg: &IndexConfig) -> Result<DatasetIndex, DatasetError> {
    cfg.validate()?;
    if !root.is_dir() {
        return Err(DatasetError::Layout(format!("{} is not a directory", root.display())));
    }
    let validation = read_list(root, VALIDATION_LIST)?;
    let testing = read_list(root, TESTING_LIST)?;
    let noise_dir = root.join(NOISE_DIR);
    if !noise_dir.is_dir() {
        return Err(DatasetError::Layout(format!("missing {}", noise_dir.display())));
    }
    let noise_paths: Vec<PathBuf> = sorted_dir(&noise_dir)?.into_iter().filter(|p| is_wav(p)).collect();
    if noise_paths.is_empty() {
        return Err(DatasetError::Layout(format!("no .wav files in {}", noise_dir.display())));
    }
    let mut noise_lens = Vec::with_capacity(noise_paths.len());
    for p in &noise_paths {
        noise_lens.push(read_wav_samples(p)?.len());
    }

    // Per split: keyword entries and unknown candidates, in path order.
    let mut keyword: BTreeMap<Split, Vec<Entry>> = BTreeMap::new();
    let mut unknown: BTreeMap<Split, Vec<Entry>> = BTreeMap::new();
    for dir in sorted_dir(root)? {
        let Some(word) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        if !dir.is_dir() || word.starts_with('_') || word.starts_with('.') {
            continue;
        }
        let kept = cfg.keywords.iter().any(|k| *k == word);
        for file in sorted_dir(&dir)?.into_iter().filter(|p| is_wav(p)) {
            let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let rel = format!("{word}/{name}");
            let split = if validation.contains(&rel) {
                Split::Validation
            } else if testing.contains(&rel) {
                Split::Test
            } else {
                Split::Train
            };
            let label = if kept { label_of(&word) } else { LabelId::UNKNOWN };
            let entry = Entry {
                source: Source::Clip(PathBuf::from(rel)),
                label,
                split,
            };
            if kept {
                keyword.entry(split).or_default().push(entry);
            } else {
                unknown.entry(split).or_default().push(entry);
            }
        }
    }

    let mut entries = Vec::new();
    for split in Split::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, split.ordinal()]));
        let kws = keyword.remove(&split).unwrap_or_default();
        let n_kw = kws.len();
        let mut pool = unknown.remove(&split).unwrap_or_default();
        pool.shuffle(&mut rng);
        pool.truncate(ratio_count(cfg.unknown_pct, n_kw));
        let mut clips: Vec<Entry> = kws.into_iter().chain(pool).collect();
        clips.sort_by(|a, b| match (&a.source, &b.source) {
            (Source::Clip(x), Source::Clip(y)) => x.cmp(y),
            _ => std::cmp::Ordering::Equal,
        });
        entries.extend(clips);
        for _ in 0..ratio_count(cfg.silence_pct, n_kw) {
            let noise = rng.gen_range(0..noise_paths.len());
            let offset = rng.gen_range(0..=noise_lens[noise].saturating_sub(CLIP_SAMPLES));
            let scale = rng.gen_range(0.0f32..=1.0);
            entries.push(Entry {
                source: Source::Silence { noise, offset, scale },
                label: LabelId::SILENCE,
                split,
            });
        }
    }

    let noise_files = noise_paths
        .iter()
        .map(|p| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
        .collect();
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        noise_files,
        config: cfg.clone(),
    })
}
