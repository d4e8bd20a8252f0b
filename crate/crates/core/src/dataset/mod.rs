//! Speech Commands style corpora: the 12-class label map, split indexing
//! from the official list files, mini-batch production and a synthetic
//! corpus generator with the same directory layout.

mod batches;
mod index;
mod synth;

use std::fmt;
use std::str::FromStr;

pub use batches::{Batch, Batches, Dataset};
pub use index::{build_index, DatasetIndex, Entry, IndexConfig, Source};
pub use synth::{generate_corpus, CorpusSummary, SynthConfig, CORPUS_WORDS};

use crate::audio::AudioError;

pub const KEYWORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const NOISE_DIR: &str = "_background_noise_";
pub const VALIDATION_LIST: &str = "validation_list.txt";
pub const TESTING_LIST: &str = "testing_list.txt";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error("split {0} has no entries")]
    EmptySplit(Split),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Class index in `0..12`: keywords first, then unknown and silence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(u8);

impl LabelId {
    pub const UNKNOWN: LabelId = LabelId(10);
    pub const SILENCE: LabelId = LabelId(11);
    pub const COUNT: usize = 12;

    pub fn new(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(LabelId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            10 => "_unknown_",
            11 => "_silence_",
            i => KEYWORDS[i as usize],
        }
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn label_of(word: &str) -> LabelId {
    KEYWORDS
        .iter()
        .position(|&k| k == word)
        .map_or(LabelId::UNKNOWN, |i| LabelId(i as u8))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn ordinal(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| DatasetError::Config(format!("unknown split {s:?}")))
    }
}

/// Mixes a sequence of integers into one RNG seed (splitmix64 finalizer).
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(acc << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}
