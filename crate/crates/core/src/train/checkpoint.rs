//! Binary checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "PDCN" | version | meta length | meta (UTF-8 JSON)
//! tensor count | { name length | name | rank | dims.. | f32 values.. }*
//! ```
//!
//! Tensors cover every parameter and batch-norm statistic (`layer/name`) and
//! every optimizer slot (`optimizer/<slot>/layer/name`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DemographicClass;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{OptimizerState, Phase};
use crate::tensor::Tensor;
use crate::zoo::{self, Architecture, ModelConfig};

pub const MAGIC: &[u8; 4] = b"PDCN";
pub const VERSION: u32 = 1;
const SLOT_PREFIX: &str = "optimizer/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub classes: Vec<String>,
    pub seed: u64,
    /// Last completed epoch (0 before training).
    pub epoch: usize,
    pub phase: Phase,
    pub optimizer: OptimizerState,
    /// Layers with parameters that are currently frozen.
    pub frozen_layers: Vec<String>,
    pub history_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Snapshot a model and its optimizer.
    pub fn capture(
        config: &ModelConfig,
        seed: u64,
        model: &Model,
        optimizer: &OptimizerState,
        epoch: usize,
        phase: Phase,
        history_digest: String,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor)> =
            model.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        for (name, slots) in &optimizer.slots {
            for (k, t) in slots.iter().enumerate() {
                tensors.push((format!("{SLOT_PREFIX}{k}/{name}"), t.clone()));
            }
        }
        let frozen_layers = model
            .nodes()
            .iter()
            .filter(|n| n.layer.has_params() && !n.layer.is_trainable())
            .map(|n| n.layer.name().to_string())
            .collect();
        let mut optimizer = optimizer.clone();
        optimizer.slots.clear();
        Checkpoint {
            meta: CheckpointMeta {
                config: config.clone(),
                classes: DemographicClass::ALL.iter().map(|c| c.to_string()).collect(),
                seed,
                epoch,
                phase,
                optimizer,
                frozen_layers,
                history_digest,
            },
            tensors,
        }
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuild the model and optimizer state. The architecture comes from the
    /// stored configuration; every tensor is then overwritten from the file.
    pub fn restore(&self) -> Result<(Model, OptimizerState)> {
        let mut config = self.meta.config.clone();
        config.pretrained = None;
        let mut model = match config.architecture {
            Architecture::Custom => zoo::build_custom_cnn(config.pooling, self.meta.seed)?,
            Architecture::Resnet50 => zoo::build_resnet50(config.pooling, None, self.meta.seed)?,
        };
        let table: BTreeMap<&str, &Tensor> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        model.visit_tensors_mut(|name, t| {
            let src = table
                .get(name)
                .ok_or_else(|| Error::Load(format!("checkpoint has no tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Load(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = (*src).clone();
            Ok(())
        })?;
        for i in 0..model.len() {
            let frozen = self.meta.frozen_layers.iter().any(|n| n == model.layer(i).name());
            model.layer_mut(i).set_trainable(!frozen);
        }
        let mut optimizer = self.meta.optimizer.clone();
        optimizer.slots.clear();
        for (name, t) in &self.tensors {
            let Some(rest) = name.strip_prefix(SLOT_PREFIX) else {
                continue;
            };
            let (k, pname) = rest
                .split_once('/')
                .and_then(|(k, p)| Some((k.parse::<usize>().ok()?, p)))
                .ok_or_else(|| Error::Load(format!("malformed optimizer slot name {name}")))?;
            let slots = optimizer.slots.entry(pname.to_string()).or_default();
            if slots.len() != k {
                return Err(Error::Load(format!("optimizer slot {name} is out of order")));
            }
            slots.push(t.clone());
        }
        Ok((model, optimizer))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_len(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        put_len(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_len(&mut out, t.rank())?;
            for &d in t.shape() {
                put_len(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let meta_len = r.u32("metadata")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::format("metadata", e.to_string()))?;
        let count = r.u32("tensor table")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("tensor table")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor table")?)
                .map_err(|_| Error::format("tensor table", "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("tensor table")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("tensor table").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format("tensor table", format!("{name} is too large")))?;
            let raw = r.take(len, "tensor table")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t =
                Tensor::from_vec(&shape, data).map_err(|e| Error::format("tensor table", format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                "trailer",
                format!("{} unexpected bytes after the tensor table", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("header", format!("{v} does not fit in u32")))?;
    put_u32(out, v);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(section, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
