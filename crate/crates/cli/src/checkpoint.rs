//! `SGN1` binary checkpoints.
//!
//! Layout: magic `SGN1`, u32 version, u32 tensor count, then per tensor a u16
//! name length, the UTF-8 name, a u8 rank, u64 dims and f64 values, all
//! little-endian. A u32-length-prefixed UTF-8 snapshot follows, and a CRC32 of
//! every preceding byte closes the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;
use tsgan_core::data::{ChannelStats, PreprocStats};
use tsgan_core::tensor::Tensor;

use crate::config::{ConfigError, RunConfig};

pub const MAGIC: &[u8; 4] = b"SGN1";
pub const VERSION: u32 = 1;

/// Snapshot lines starting with this prefix carry metadata rather than config keys.
const META_PREFIX: &str = "meta.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Content(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Named tensors plus a text snapshot of the run configuration and metadata.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: BTreeMap<String, String>,
    pub config: String,
}

impl Checkpoint {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tensors: Vec::new(),
            meta: BTreeMap::new(),
            config: config.to_text(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Content(format!("metadata `{key}` missing")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Content(format!("tensor `{name}` missing")))
    }

    pub fn tensor_map(&self) -> BTreeMap<String, Tensor> {
        self.tensors.iter().cloned().collect()
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        Ok(RunConfig::parse(&self.config)?)
    }

    /// Checks `meta.kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        let found = self.meta("kind")?;
        if found != kind {
            return Err(CheckpointError::Content(format!("expected a {kind} checkpoint, found {found}")));
        }
        Ok(())
    }

    /// Stores standardization statistics as `stats.*` tensors plus channel metadata.
    pub fn put_stats(&mut self, stats: &PreprocStats) {
        let names: Vec<&str> = stats.channels.iter().map(|c| c.name.as_str()).collect();
        self.meta.insert("stats.channels".into(), names.join(","));
        let col = |f: &dyn Fn(&ChannelStats) -> f64| Tensor::from_vec(stats.channels.iter().map(f).collect());
        self.push("stats.mean", col(&|c| c.mean));
        self.push("stats.std", col(&|c| c.std));
        self.push("stats.log1p", col(&|c| if c.log1p { 1.0 } else { 0.0 }));
    }

    pub fn stats(&self) -> Result<PreprocStats> {
        let names: Vec<&str> = self.meta("stats.channels")?.split(',').collect();
        let (mean, std, log1p) = (self.tensor("stats.mean")?, self.tensor("stats.std")?, self.tensor("stats.log1p")?);
        if [mean, std, log1p].iter().any(|t| t.shape() != [names.len()]) {
            return Err(CheckpointError::Content("statistics tensors do not match channel list".into()));
        }
        Ok(PreprocStats {
            channels: names
                .iter()
                .enumerate()
                .map(|(i, n)| ChannelStats {
                    name: n.to_string(),
                    mean: mean.values()[i],
                    std: std.values()[i],
                    log1p: log1p.values()[i] != 0.0,
                })
                .collect(),
        })
    }

    fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("{META_PREFIX}{k} = {v}\n"));
        }
        s.push_str(&self.config);
        s
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| CheckpointError::Content("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| CheckpointError::Content(format!("tensor name `{name}` is too long")))?;
            let rank = u8::try_from(t.shape().len())
                .map_err(|_| CheckpointError::Content(format!("tensor `{name}` has too many dimensions")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let snapshot = self.snapshot();
        let len = u32::try_from(snapshot.len()).map_err(|_| CheckpointError::Content("snapshot too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(snapshot.as_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::Format("missing SGN1 magic".into()));
        }
        if bytes.len() < 4 + 4 + 4 + 4 + 4 {
            return Err(CheckpointError::Corrupt(format!("file truncated at {} bytes", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(CheckpointError::Corrupt("checksum mismatch (truncated or modified)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| CheckpointError::Corrupt("dimension overflow".into()))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor `{name}` overruns the file")))?;
            let raw = r.take(numel * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, values).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.push((name, t));
        }
        let len = r.u32()? as usize;
        let snapshot = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Corrupt("snapshot is not UTF-8".into()))?;
        if r.remaining() != 0 {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let mut meta = BTreeMap::new();
        let mut config = String::new();
        for line in snapshot.lines() {
            match line.strip_prefix(META_PREFIX).and_then(|l| l.split_once(" = ")) {
                Some((k, v)) => {
                    meta.insert(k.to_string(), v.to_string());
                }
                None => {
                    config.push_str(line);
                    config.push('\n');
                }
            }
        }
        Ok(Self { tensors, meta, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(CheckpointError::Corrupt(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
