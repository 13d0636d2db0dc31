//! Binary model and regressor files.
//!
//! Layout (all integers u64 little-endian unless noted, floats f64 LE):
//! 8-byte magic, then length-prefixed sections. A checkpoint holds the
//! canonical config text, the size histogram, property statistics and the
//! named parameter blocks `(name, rank: u32, dims, row-major values)`.
//! Trailing bytes are treated as corruption.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdm_core::chem_eval::{PropertyRegressor, RegressorConfig, SizeBaseline};
use mdm_core::geometry::{ElementSet, MolecularGeometry};
use mdm_core::linalg::Mat;
use mdm_core::model::Model;
use mdm_core::params::ParamStore;
use mdm_core::sampling::SizeHistogram;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::PropertyStats;
use crate::xyz::{format_xyz, parse_xyz, XyzBlock};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDMCKPT1";
pub const REGRESSOR_MAGIC: &[u8; 8] = b"MDMREGR1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint corrupt at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("unsupported file version {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },
    #[error("stored parameters do not match the stored configuration: {0}")]
    Mismatch(String),
    #[error("stored configuration is invalid: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// A trained model together with what the sampler needs to use it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub histogram: SizeHistogram,
    pub stats: BTreeMap<String, PropertyStats>,
    pub model: Model,
}

/// A fitted property regressor plus the real data it is judged against.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorFile {
    pub property: String,
    pub elements: ElementSet,
    pub config: RegressorConfig,
    pub regressor: PropertyRegressor,
    pub size_baseline: SizeBaseline,
    /// Held-out labelled molecules the regressor never trained on.
    pub eval_split: Vec<(MolecularGeometry, f64)>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn blocks(&mut self, store: &ParamStore) {
        self.usize(store.len());
        for b in store.blocks() {
            self.str(&b.name);
            let (r, c) = b.value.shape();
            self.u32(2);
            self.usize(r);
            self.usize(c);
            b.value.as_slice().iter().for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt { offset: self.pos, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("needs {n} more bytes, file ends at {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count or length that cannot exceed the bytes left in the file.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if v.checked_mul(unit as u64).is_none_or(|need| need > left) {
            return Err(CheckpointError::Corrupt { offset: at, reason: format!("length {v} exceeds the file") });
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt { offset: at, reason: "string is not UTF-8".into() })
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let m = self.take(8).map_err(|_| self.corrupt("file shorter than its magic"))?;
        if m == expected {
            return Ok(());
        }
        if m[..7] == expected[..7] {
            return Err(CheckpointError::Version {
                found: String::from_utf8_lossy(m).into_owned(),
                expected: String::from_utf8_lossy(expected).into_owned(),
            });
        }
        self.pos = 0;
        Err(self.corrupt("bad magic"))
    }

    fn blocks(&mut self) -> Result<ParamStore> {
        let n = self.len(8)?;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = self.str()?;
            let at = self.pos;
            let rank = self.u32()?;
            if rank != 2 {
                return Err(CheckpointError::Corrupt { offset: at, reason: format!("block {name} has rank {rank}") });
            }
            let r = self.len(1)?;
            let c = self.len(1)?;
            let count = r.checked_mul(c).ok_or_else(|| self.corrupt("block too large"))?;
            let at = self.pos;
            if count.checked_mul(8).is_none_or(|need| need > self.bytes.len() - self.pos) {
                return Err(CheckpointError::Corrupt { offset: at, reason: format!("block {name} exceeds the file") });
            }
            let values = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            store.push(&name, Mat::from_vec(r, c, values));
        }
        Ok(store)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

/// Builds the block layout implied by `config` and fills it from `stored`.
fn rebuild_model(config: &RunConfig, stored: &ParamStore) -> Result<Model> {
    let mut model = Model::new(config.net.clone(), &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    model.store.copy_values_from(stored).map_err(CheckpointError::Mismatch)?;
    Ok(model)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.str(&self.config.to_text());
        w.usize(self.histogram.len());
        for (&n, &c) in &self.histogram {
            w.usize(n);
            w.usize(c);
        }
        w.usize(self.stats.len());
        for (name, s) in &self.stats {
            w.str(name);
            w.f64(s.mean);
            w.f64(s.std);
        }
        w.blocks(&self.model.store);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.pos;
        let text = r.str()?;
        let config = RunConfig::parse(&text, "checkpoint")
            .map_err(|e| CheckpointError::Corrupt { offset: at, reason: e.to_string() })?;
        let mut histogram = SizeHistogram::new();
        for _ in 0..r.len(16)? {
            let n = r.u64()? as usize;
            histogram.insert(n, r.u64()? as usize);
        }
        let mut stats = BTreeMap::new();
        for _ in 0..r.len(24)? {
            let name = r.str()?;
            stats.insert(name, PropertyStats { mean: r.f64()?, std: r.f64()? });
        }
        let stored = r.blocks()?;
        r.finish()?;
        let model = rebuild_model(&config, &stored)?;
        Ok(Self { config, histogram, stats, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl RegressorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(REGRESSOR_MAGIC);
        w.str(&self.property);
        w.str(&self.elements.symbols().join(","));
        let c = &self.config;
        for v in [c.hidden_dim, c.n_layers, c.epochs, c.batch_size] {
            w.usize(v);
        }
        w.f64(c.lr);
        w.f64(self.regressor.mean);
        w.f64(self.regressor.std);
        w.f64(self.size_baseline.fallback);
        w.usize(self.size_baseline.by_size.len());
        for (&n, &v) in &self.size_baseline.by_size {
            w.usize(n);
            w.f64(v);
        }
        let blocks: Vec<XyzBlock> = self
            .eval_split
            .iter()
            .map(|(g, y)| XyzBlock::from_geometry(g, &self.elements).with_property(&self.property, *y))
            .collect();
        w.str(&format_xyz(&blocks));
        w.blocks(&self.regressor.store);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(REGRESSOR_MAGIC)?;
        let property = r.str()?;
        let at = r.pos;
        let symbols = r.str()?;
        let elements = ElementSet::new(symbols.split(',').map(str::to_string).collect())
            .map_err(|e| CheckpointError::Corrupt { offset: at, reason: e.to_string() })?;
        let at = r.pos;
        let dims = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
        if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(CheckpointError::Corrupt { offset: at, reason: "bad regressor dimensions".into() });
        }
        let [hidden_dim, n_layers, epochs, batch_size] = dims.map(|d| d as usize);
        let config = RegressorConfig { hidden_dim, n_layers, epochs, batch_size, lr: r.f64()? };
        let (mean, std) = (r.f64()?, r.f64()?);
        let fallback = r.f64()?;
        let mut by_size = BTreeMap::new();
        for _ in 0..r.len(16)? {
            let n = r.u64()? as usize;
            by_size.insert(n, r.f64()?);
        }
        let at = r.pos;
        let text = r.str()?;
        let corrupt = |reason: String| CheckpointError::Corrupt { offset: at, reason };
        let eval_split = parse_xyz(&text, Path::new("embedded"))
            .map_err(|e| corrupt(e.to_string()))?
            .iter()
            .map(|b| {
                let y = *b.properties.get(&property).ok_or_else(|| corrupt(format!("eval molecule lacks {property}")))?;
                let g = b.to_geometry(&elements, Path::new("embedded")).map_err(|e| corrupt(e.to_string()))?;
                Ok((g, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let stored = r.blocks()?;
        r.finish()?;
        let mut regressor =
            PropertyRegressor::new(elements.feature_dim(), &config, &mut ChaCha8Rng::seed_from_u64(0));
        regressor.store.copy_values_from(&stored).map_err(CheckpointError::Mismatch)?;
        regressor.mean = mean;
        regressor.std = std;
        regressor.trained = true;
        Ok(Self { property, elements, config, regressor, size_baseline: SizeBaseline { by_size, fallback }, eval_split })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
