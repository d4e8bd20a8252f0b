//! Binary checkpoint: weights, layer-dependent statistics and provenance.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "ODEKWS" | version u32 = 1
//! variant tag: len u32, UTF-8
//! config digest: 32 bytes (SHA-256)
//! tensor count u32, then per tensor: name (len u32, UTF-8), rank u32, dims u32.., f32 payload
//! layer count u32, then per layer: id (len u32, UTF-8), channels u32, record count u32,
//!     records sorted by time: t f64, mean f32 × channels, var f32 × channels, count u64
//! epoch u32
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::lbn::{LbnDatabase, StatRecord, TimeKey};
use crate::models::{Model, ModelSpec, Variant};

pub const MAGIC: &[u8; 6] = b"ODEKWS";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint ({section}): {detail}")]
    Corrupt { section: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn corrupt(section: &'static str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt {
        section,
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub config_digest: [u8; 32],
    /// Zero-based index of the epoch that produced the weights.
    pub epoch: u32,
}

/// SHA-256 over the model settings and a textual training configuration.
pub fn config_digest(spec: &ModelSpec, train_config: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("{spec:?}").as_bytes());
    h.update([0u8]);
    h.update(train_config.as_bytes());
    h.finalize().into()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(section, format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, section: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, section: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, section: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self, section: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(section)? as usize;
        String::from_utf8(self.take(n, section)?.to_vec()).map_err(|_| corrupt(section, "invalid UTF-8"))
    }
    fn f32s(&mut self, n: usize, section: &'static str) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt(section, "size overflow"))?, section)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(self.model.spec().variant.name());
        w.0.extend_from_slice(&self.config_digest);
        let params = &self.model.net.params;
        w.u32(params.len() as u32);
        for p in params.iter() {
            w.str(&p.name);
            w.u32(p.value.dims().len() as u32);
            for &d in p.value.dims() {
                w.u32(d as u32);
            }
            w.f32s(p.value.data());
        }
        let layers: Vec<_> = self.model.db.layers().collect();
        w.u32(layers.len() as u32);
        for (id, records) in layers {
            w.str(id);
            let channels = records.values().next().map_or(0, |r| r.mean.len());
            w.u32(channels as u32);
            w.u32(records.len() as u32);
            for (key, r) in records {
                w.0.extend_from_slice(&key.time().to_le_bytes());
                w.f32s(&r.mean);
                w.f32s(&r.var);
                w.0.extend_from_slice(&r.count.to_le_bytes());
            }
        }
        w.u32(self.epoch);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len(), "header")? != MAGIC {
            return Err(corrupt("header", "bad magic"));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(corrupt("header", format!("unsupported version {version}")));
        }
        let tag = r.str("variant")?;
        let variant: Variant = tag
            .parse()
            .map_err(|_| corrupt("variant", format!("unknown variant {tag:?}")))?;
        let config_digest: [u8; 32] = r.take(32, "digest")?.try_into().expect("32 bytes");

        let mut model = Model::build(ModelSpec::new(variant), 0);
        let n_tensors = r.u32("tensors")? as usize;
        if n_tensors != model.net.params.len() {
            return Err(corrupt(
                "tensors",
                format!("{n_tensors} tensors, {variant} has {}", model.net.params.len()),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for _ in 0..n_tensors {
            let name = r.str("tensors")?;
            if !seen.insert(name.clone()) {
                return Err(corrupt("tensors", format!("duplicate tensor {name}")));
            }
            let rank = r.u32("tensors")? as usize;
            if rank > 8 {
                return Err(corrupt("tensors", format!("{name}: rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank)
                .map(|_| r.u32("tensors").map(|d| d as usize))
                .collect::<Result<_, _>>()?;
            let n = dims.iter().product();
            let data = r.f32s(n, "tensors")?;
            let tensor = Tensor::new(dims, data).map_err(|e| corrupt("tensors", format!("{name}: {e}")))?;
            model
                .net
                .params
                .set_value(&name, tensor)
                .map_err(|e| corrupt("tensors", format!("{name}: {e}")))?;
        }

        let mut db = LbnDatabase::new();
        let n_layers = r.u32("lbn")? as usize;
        for _ in 0..n_layers {
            let id = r.str("lbn")?;
            let channels = r.u32("lbn")? as usize;
            let n_records = r.u32("lbn")? as usize;
            let mut last: Option<TimeKey> = None;
            for _ in 0..n_records {
                let t = r.f64("lbn")?;
                if !t.is_finite() {
                    return Err(corrupt("lbn", format!("{id}: non-finite time")));
                }
                let key = TimeKey::quantize(t);
                if last.is_some_and(|k| k >= key) {
                    return Err(corrupt("lbn", format!("{id}: records not sorted by time")));
                }
                last = Some(key);
                let mean = r.f32s(channels, "lbn")?;
                let var = r.f32s(channels, "lbn")?;
                let count = r.u64("lbn")?;
                db.insert(&id, key, StatRecord { mean, var, count });
            }
        }
        model.db = db;
        let epoch = r.u32("epoch")?;
        if r.pos != buf.len() {
            return Err(corrupt("epoch", format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            model,
            config_digest,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
