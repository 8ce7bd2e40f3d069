//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "EFPGCKPT"
//! version  u32      1
//! config   u32 length + UTF-8 text (the training config, embedding_dim resolved)
//! count    u32      number of tensors
//! manifest per tensor: u32 name length, name, u32 rank, rank × u64 dims,
//!          u64 offset and u64 length in f64 elements from the start of data
//! data     f64 values
//! ```
//!
//! The manifest is read and compared against the target model before any
//! tensor data is touched.

use std::path::Path;

use crate::config::TrainConfig;
use crate::corpus::read_bytes;
use crate::error::{with_path, Error, Result};
use crate::model::{EfpModel, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"EFPGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub manifest: Vec<ManifestEntry>,
    data: Vec<f64>,
}

impl Checkpoint {
    /// Tensor values in manifest order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.manifest
            .iter()
            .map(|e| {
                Tensor::new(
                    e.shape.clone(),
                    self.data[e.offset..e.offset + e.len].to_vec(),
                )
                .expect("manifest validated on read")
            })
            .collect()
    }
}

fn resolved_config(model: &EfpModel, cfg: &TrainConfig) -> TrainConfig {
    let spec = model.spec();
    TrainConfig {
        embedding_dim: spec.embedding_dim,
        lambda: spec.lambda,
        ..cfg.clone()
    }
}

pub fn encode_checkpoint(model: &EfpModel, cfg: &TrainConfig) -> Vec<u8> {
    let params = model.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = resolved_config(model, cfg).to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.names().iter().zip(params.values()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
        offset += t.numel() as u64;
    }
    for t in params.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in memory")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

/// Parses the header and manifest, then the data block.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let config = TrainConfig::parse(&r.string("config")?)?;
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    let mut expected_offset = 0;
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("dimension"))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64("offset")?;
        let len = r.u64("length")?;
        if shape.iter().product::<usize>() != len || offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "inconsistent manifest entry for {name}"
            )));
        }
        expected_offset += len;
        manifest.push(ManifestEntry {
            name,
            shape,
            offset,
            len,
        });
    }
    let raw = r.take(expected_offset * 8, "tensor data")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        config,
        manifest,
        data,
    })
}

/// Compares the manifest with the parameters of `model`.
pub fn check_compatible(manifest: &[ManifestEntry], model: &EfpModel) -> Result<()> {
    let params = model.params();
    let mismatches: Vec<String> = params
        .names()
        .iter()
        .zip(params.values())
        .map(|(name, t)| (name, t.shape(), manifest.iter().find(|e| &e.name == name)))
        .filter_map(|(name, shape, entry)| match entry {
            None => Some(format!("{name}: model {shape:?}, missing from checkpoint")),
            Some(e) if e.shape != shape => {
                Some(format!("{name}: model {shape:?}, checkpoint {:?}", e.shape))
            }
            Some(_) => None,
        })
        .chain(
            manifest
                .iter()
                .filter(|e| params.find(&e.name).is_none())
                .map(|e| format!("{}: checkpoint {:?}, absent from model", e.name, e.shape)),
        )
        .collect();
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "shape mismatch: {}",
            mismatches.join("; ")
        )))
    }
}

impl Checkpoint {
    /// Rebuilds the model described by the stored config.
    pub fn into_model(self) -> Result<(EfpModel, TrainConfig)> {
        let cfg = self.config.clone();
        self.into_model_with(&cfg)
    }

    /// Loads the tensors into a model built from `cfg`, failing if any
    /// parameter shape differs.
    pub fn into_model_with(self, cfg: &TrainConfig) -> Result<(EfpModel, TrainConfig)> {
        let dim = if cfg.embedding_dim == 0 {
            self.config.embedding_dim
        } else {
            cfg.embedding_dim
        };
        let spec = ModelSpec::from_config(cfg, dim)?;
        let mut model = EfpModel::new(spec, cfg.seed);
        check_compatible(&self.manifest, &model)?;
        let tensors = self.tensors();
        let ordered = model
            .params()
            .names()
            .iter()
            .map(|n| {
                let i = self
                    .manifest
                    .iter()
                    .position(|e| &e.name == n)
                    .expect("checked");
                tensors[i].clone()
            })
            .collect();
        model.load_values(ordered)?;
        let cfg = TrainConfig {
            embedding_dim: dim,
            ..cfg.clone()
        };
        Ok((model, cfg))
    }
}

pub fn save_checkpoint(path: &Path, model: &EfpModel, cfg: &TrainConfig) -> Result<()> {
    with_path(path, std::fs::write(path, encode_checkpoint(model, cfg)))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?)
}
