//! Model checkpoints.
//!
//! Layout (little-endian): magic, version, stage, SHA-256 of the model config
//! text, optional SHA-256 of the stage-1 differentiator parameters, seed,
//! the config text itself, optional Adam scalars, then named f64 blocks
//! (parameters, normalization, Adam moments).

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::binary::{len_u32, read_file, write_file, Reader, Writer};
use super::config::{model_config_from_text, model_config_text};
use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::error::{Error, FormatError, Result};
use crate::model::{is_differentiator_param, Model, Normalization};
use crate::training::Stage;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PARCCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_NORM: u8 = 1;
const KIND_ADAM_M: u8 = 2;
const KIND_ADAM_V: u8 = 3;

pub type Digest32 = [u8; 32];

pub fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_digest(text: &str) -> Digest32 {
    Sha256::digest(text.as_bytes()).into()
}

/// Digest of the differentiator (`diff.*`) blocks: names, shapes and raw
/// f64 bytes in name order.
pub fn theta_digest(params: &ParamStore) -> Digest32 {
    let mut h = Sha256::new();
    for (name, t) in params.iter().filter(|(k, _)| is_differentiator_param(k)) {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub model: Model,
    pub seed: u64,
    /// For stage-2 checkpoints, the digest of the frozen stage-1 θ.
    pub stage1_theta: Option<Digest32>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn stage1(model: Model, seed: u64, optimizer: Option<AdamState>) -> Self {
        Self {
            stage: Stage::Differentiator,
            model,
            seed,
            stage1_theta: None,
            optimizer,
        }
    }

    /// Stage-2 checkpoint built on `stage1`; fails if θ has changed.
    pub fn stage2(stage1: &Checkpoint, model: Model, seed: u64, optimizer: Option<AdamState>) -> Result<Self> {
        let frozen = theta_digest(&stage1.model.params);
        if theta_digest(&model.params) != frozen {
            return Err(Error::Contract("differentiator parameters differ from the stage-1 checkpoint".into()));
        }
        Ok(Self {
            stage: Stage::Correction,
            model,
            seed,
            stage1_theta: Some(frozen),
            optimizer,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let text = model_config_text(&self.model.config);
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(self.stage.number());
        w.bytes(&config_digest(&text));
        match &self.stage1_theta {
            Some(d) => {
                w.u8(1);
                w.bytes(d);
            }
            None => w.u8(0),
        }
        w.u64(self.seed);
        w.str(&text)?;
        match &self.optimizer {
            Some(a) => {
                w.u8(1);
                w.f64(a.lr);
                w.f64(a.beta1);
                w.f64(a.beta2);
                w.f64(a.eps);
                w.u64(a.step);
            }
            None => w.u8(0),
        }
        let norm = self.model.norm.to_blocks();
        let mut blocks: Vec<(u8, &String, &Tensor)> = Vec::new();
        blocks.extend(self.model.params.iter().map(|(k, v)| (KIND_PARAM, k, v)));
        blocks.extend(norm.iter().map(|(k, v)| (KIND_NORM, k, v)));
        if let Some(a) = &self.optimizer {
            blocks.extend(a.m.iter().map(|(k, v)| (KIND_ADAM_M, k, v)));
            blocks.extend(a.v.iter().map(|(k, v)| (KIND_ADAM_V, k, v)));
        }
        w.u32(len_u32(blocks.len(), "block count")?);
        for (kind, name, t) in blocks {
            w.u8(kind);
            w.str(name)?;
            w.u32(len_u32(t.shape().len(), "rank")?);
            for &d in t.shape() {
                w.u32(len_u32(d, "dimension")?);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let stage = match r.u8()? {
            1 => Stage::Differentiator,
            2 => Stage::Correction,
            s => return Err(r.malformed(format!("unknown stage {s}"))),
        };
        let digest = r.digest()?;
        let stage1_theta = match r.u8()? {
            0 => None,
            1 => Some(r.digest()?),
            f => return Err(r.malformed(format!("bad flag {f}"))),
        };
        let seed = r.u64()?;
        let text = r.str()?;
        if config_digest(&text) != digest {
            return Err(r.malformed("model config digest mismatch"));
        }
        let config = model_config_from_text(&text).map_err(|e| r.malformed(e.to_string()))?;
        if model_config_text(&config) != text {
            return Err(r.malformed("model config text is not in canonical form"));
        }
        let mut optimizer = match r.u8()? {
            0 => None,
            1 => {
                let mut a = AdamState::new(r.f64()?);
                a.beta1 = r.f64()?;
                a.beta2 = r.f64()?;
                a.eps = r.f64()?;
                a.step = r.u64()?;
                Some(a)
            }
            f => return Err(r.malformed(format!("bad flag {f}"))),
        };
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut norm = ParamStore::new();
        let mut prev: Option<(u8, String)> = None;
        for _ in 0..n {
            let kind = r.u8()?;
            let name = r.str()?;
            let key = (kind, name.clone());
            if prev.as_ref().is_some_and(|p| *p >= key) {
                return Err(r.malformed(format!("block {name:?} out of order or duplicated")));
            }
            prev = Some(key);
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let Some(len) = len.filter(|&n| n <= r.remaining() / 8) else {
                return Err(r.fail(FormatError::Truncated {
                    expected: u64::MAX,
                    found: bytes.len() as u64,
                }));
            };
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data)?;
            let target: &mut BTreeMap<String, Tensor> = match (kind, optimizer.as_mut()) {
                (KIND_PARAM, _) => &mut params,
                (KIND_NORM, _) => &mut norm,
                (KIND_ADAM_M, Some(a)) => &mut a.m,
                (KIND_ADAM_V, Some(a)) => &mut a.v,
                _ => return Err(r.malformed(format!("unexpected block kind {kind} for {name:?}"))),
            };
            target.insert(name, t);
        }
        r.finish()?;
        let norm = Normalization::from_blocks(&norm).map_err(|e| r.malformed(e.to_string()))?;
        let model = Model::from_parts(config, norm, params).map_err(|e| r.malformed(e.to_string()))?;
        if let Some(d) = &stage1_theta {
            if theta_digest(&model.params) != *d {
                return Err(Error::Contract(format!(
                    "{path:?}: differentiator parameters do not match the embedded stage-1 digest"
                )));
            }
        }
        Ok(Self {
            stage,
            model,
            seed,
            stage1_theta,
            optimizer,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}
