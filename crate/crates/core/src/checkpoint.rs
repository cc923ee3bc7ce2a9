//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BFCK"  u32 version
//! u64 len, config as TOML (UTF-8)
//! u64 series length the timestamps were normalized against
//! u32 C, then C × (mean f64, std f64)
//! u32 blocks, then per block: u32 name len, name, u32 rank, rank × u64 dims, f64 values
//! u8 optimizer flag; if 1: u64 step, then every first moment, then every second moment
//! ```
//!
//! Moments are stored as raw f64 in parameter order with the parameter shapes.

use std::path::{Path, PathBuf};

use crate::config::ModelConfig;
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::BasisFormer;
use crate::optim::AdaBelief;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BFCK";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained forecaster.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Length of the series `τ = t / T` was computed against.
    pub series_len: usize,
    pub normalizer: Normalizer,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn capture(opt: &AdaBelief) -> Self {
        Self {
            step: opt.step_count(),
            first_moment: opt.first_moment().to_vec(),
            second_moment: opt.second_moment().to_vec(),
        }
    }
}

impl Checkpoint {
    pub fn capture(model: &BasisFormer, normalizer: &Normalizer, series_len: usize, optimizer: Option<&AdaBelief>) -> Self {
        Self {
            config: model.config.clone(),
            series_len,
            normalizer: normalizer.clone(),
            params: model.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            optimizer: optimizer.map(OptimizerState::capture),
        }
    }

    /// Rebuilds the model; every stored block must match the architecture
    /// the stored config describes.
    pub fn model(&self) -> Result<BasisFormer> {
        let mut model = BasisFormer::new(&self.config)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Input(format!(
                "checkpoint holds {} parameter blocks, the configured model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = model
                .store
                .position(name)
                .ok_or_else(|| Error::Input(format!("checkpoint parameter `{name}` is not part of the model")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::shape("checkpoint parameter", value.shape(), slot.shape()));
            }
            *slot = value.clone();
        }
        Ok(model)
    }

    /// Fails with a config error naming the first key that differs from
    /// `expected`.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<()> {
        match self.config.first_difference(expected) {
            None => Ok(()),
            Some(key) => Err(Error::config(format!(
                "checkpoint was trained with a different `{key}` than the requested configuration"
            ))),
        }
    }

    /// Optimizer state matching the stored parameters, if it was saved.
    pub fn optimizer(&self) -> Result<Option<AdaBelief>> {
        self.optimizer
            .as_ref()
            .map(|s| {
                AdaBelief::from_parts(
                    self.config.optimizer(),
                    s.first_moment.clone(),
                    s.second_moment.clone(),
                    s.step,
                )
            })
            .transpose()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        let config = self.config.to_toml_string();
        w.u64(config.len() as u64);
        w.bytes(config.as_bytes());
        w.u64(self.series_len as u64);
        w.u32(self.normalizer.channels() as u32);
        for (m, s) in self.normalizer.mean.iter().zip(&self.normalizer.std) {
            w.f64(*m);
            w.f64(*s);
        }
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.values(t.data());
        }
        match &self.optimizer {
            None => w.bytes(&[0]),
            Some(state) => {
                w.bytes(&[1]);
                w.u64(state.step);
                for t in state.first_moment.iter().chain(&state.second_moment) {
                    w.values(t.data());
                }
            }
        }
        w.0
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            buf: bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(r.error("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = r.len()?;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.error("config is not UTF-8"))?;
        let config = ModelConfig::from_toml_str(text)?;
        let series_len = r.len()?;
        let channels = r.u32()? as usize;
        let mut mean = Vec::with_capacity(channels.min(1 << 16));
        let mut std = Vec::with_capacity(channels.min(1 << 16));
        for _ in 0..channels {
            mean.push(r.f64()?);
            std.push(r.f64()?);
        }
        let blocks = r.u32()? as usize;
        let mut params = Vec::with_capacity(blocks.min(1 << 16));
        for _ in 0..blocks {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let values = r.values(numel.ok_or_else(|| r.error("parameter shape overflows"))?)?;
            let t = Tensor::new(shape, values).map_err(|e| r.error(format!("parameter `{name}`: {e}")))?;
            params.push((name, t));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let read_moments = |r: &mut Reader| -> Result<Vec<Tensor>> {
                    params
                        .iter()
                        .map(|(_, p)| Tensor::new(p.shape(), r.values(p.numel())?))
                        .collect()
                };
                let first_moment = read_moments(&mut r)?;
                let second_moment = read_moments(&mut r)?;
                Some(OptimizerState {
                    step,
                    first_moment,
                    second_moment,
                })
            }
            other => return Err(r.error(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            series_len,
            normalizer: Normalizer { mean, std },
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

pub fn save_checkpoint(model: &BasisFormer, normalizer: &Normalizer, series_len: usize, optimizer: Option<&AdaBelief>, path: &Path) -> Result<()> {
    Checkpoint::capture(model, normalizer, series_len, optimizer).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn values(&mut self, vs: &[f64]) {
        self.0.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: PathBuf::from(self.path),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error(format!("truncated at byte {}", self.buf.len()))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.error(format!("length {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.error("block too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
