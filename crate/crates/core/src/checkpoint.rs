//! Binary model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MKTCNCKP"
//! version  u32
//! hash     u64      preprocessing config hash
//! meta     u32 length + UTF-8 JSON (configs, PCA, optimizer scalars)
//! count    u32
//! section  u16 name length + name, u8 rank, rank × u64 dims, f64 values
//! ...
//! digest   32 bytes SHA-256 of everything above
//! ```
//!
//! Sections hold model parameters under their parameter names, the head-input
//! normalization (`norm.shift`, `norm.scale`), Adam moments (`adam.m.<name>`,
//! `adam.v.<name>`) and the per-step loss history (`state.loss_history`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{MktcnModel, ModelConfig};
use crate::preprocess::{PcaModel, PreprocessConfig};
use crate::tensor::{Rng, Tensor};
use crate::train::{EpochLog, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"MKTCNCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const MAX_RANK: usize = 8;

/// Everything needed to resume evaluation or training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MktcnModel,
    pub state: TrainState,
    pub train_config: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub pca: PcaModel,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    preprocess: PreprocessConfig,
    pca: PcaModel,
    step: u64,
    best_val_macro_f1: f64,
    best_epoch: usize,
    /// Epoch summaries without wall-clock times, so equal runs give equal files.
    epochs: Vec<(usize, f64, f64)>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn push_section(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn config_hash(&self) -> u64 {
        self.preprocess.hash()
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = Meta {
            model: self.model.config.clone(),
            train: self.train_config.clone(),
            preprocess: self.preprocess.clone(),
            pca: self.pca.clone(),
            step: self.state.step,
            best_val_macro_f1: self.state.best_val_macro_f1,
            best_epoch: self.state.best_epoch,
            epochs: self
                .state
                .epochs
                .iter()
                .map(|e| (e.epoch, e.train_loss, e.val_macro_f1))
                .collect(),
        };
        let meta = serde_json::to_value(&meta).expect("metadata serializes").to_string();

        let params = self.model.parameters();
        let mut sections: Vec<(String, &Tensor)> = params.clone();
        sections.push(("norm.shift".into(), &self.model.norm.shift));
        sections.push(("norm.scale".into(), &self.model.norm.scale));
        for ((name, _), m) in params.iter().zip(&self.state.m) {
            sections.push((format!("adam.m.{name}"), m));
        }
        for ((name, _), v) in params.iter().zip(&self.state.v) {
            sections.push((format!("adam.v.{name}"), v));
        }
        let history =
            Tensor::new(vec![self.state.loss_history.len()], self.state.loss_history.clone()).expect("1-D tensor");
        sections.push(("state.loss_history".into(), &history));

        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.config_hash().to_le_bytes());
        out.extend((meta.len() as u32).to_le_bytes());
        out.extend(meta.as_bytes());
        out.extend((sections.len() as u32).to_le_bytes());
        for (name, t) in &sections {
            push_section(&mut out, name, t);
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        out
    }

    /// Parses a checkpoint. Any inconsistency is a checkpoint error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
            return Err(ckpt_err(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(ckpt_err("bad magic bytes"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ckpt_err("checksum mismatch (file truncated or corrupted)"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hash = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| ckpt_err("metadata is not UTF-8"))?;
        let meta: Meta = serde_json::from_str(meta_text).map_err(|e| ckpt_err(format!("metadata: {e}")))?;
        if meta.preprocess.hash() != hash {
            return Err(ckpt_err("header hash does not match the stored preprocessing config"));
        }
        let count = r.u32()? as usize;
        let mut sections = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ckpt_err("section name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(ckpt_err(format!("section {name}: rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut size = 1usize;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| ckpt_err("dimension overflow"))?;
                size = size.checked_mul(d).ok_or_else(|| ckpt_err("dimension overflow"))?;
                dims.push(d);
            }
            let raw = r.take(size.checked_mul(8).ok_or_else(|| ckpt_err("dimension overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if sections.insert(name.clone(), Tensor::new(dims, data)?).is_some() {
                return Err(ckpt_err(format!("duplicate section {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(ckpt_err("trailing bytes after the last section"));
        }
        Self::assemble(meta, sections)
    }

    fn assemble(meta: Meta, mut sections: std::collections::BTreeMap<String, Tensor>) -> Result<Self> {
        meta.model.validate()?;
        if meta.model.input_len > 1 << 24
            || meta.model.hidden.iter().any(|&h| h > 1 << 16)
            || meta.model.n_classes > 1 << 16
        {
            return Err(ckpt_err("model dimensions are implausibly large"));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = sections
                .remove(name)
                .ok_or_else(|| ckpt_err(format!("missing section {name}")))?;
            if t.shape() != shape {
                return Err(ckpt_err(format!(
                    "section {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        // The structure comes from the config; every value is then overwritten.
        let mut model = MktcnModel::new(meta.model.clone(), &mut Rng::new(0))?;
        let layout: Vec<(String, Vec<usize>)> = model
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for ((name, shape), slot) in layout.iter().zip(model.parameters_mut()) {
            *slot = take(name, shape)?;
        }
        let l = meta.model.input_len;
        model.norm.shift = take("norm.shift", &[l])?;
        model.norm.scale = take("norm.scale", &[l])?;
        let mut m = Vec::with_capacity(layout.len());
        let mut v = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            m.push(take(&format!("adam.m.{name}"), shape)?);
        }
        for (name, shape) in &layout {
            v.push(take(&format!("adam.v.{name}"), shape)?);
        }
        let history = sections
            .remove("state.loss_history")
            .ok_or_else(|| ckpt_err("missing section state.loss_history"))?;
        if history.shape().len() != 1 {
            return Err(ckpt_err("loss history must be one-dimensional"));
        }
        if let Some(extra) = sections.keys().next() {
            return Err(ckpt_err(format!("unexpected section {extra}")));
        }
        let state = TrainState {
            step: meta.step,
            m,
            v,
            best_val_macro_f1: meta.best_val_macro_f1,
            best_epoch: meta.best_epoch,
            loss_history: history.into_data(),
            epochs: meta
                .epochs
                .into_iter()
                .map(|(epoch, train_loss, val_macro_f1)| EpochLog {
                    epoch,
                    train_loss,
                    val_macro_f1,
                    wall_ms: 0,
                })
                .collect(),
        };
        Ok(Checkpoint {
            model,
            state,
            train_config: meta.train,
            preprocess: meta.preprocess,
            pca: meta.pca,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ckpt_err(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn sample(head: HeadKind) -> Checkpoint {
        let train_config = TrainConfig {
            hidden: vec![3, 4],
            head,
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(2);
        let model = MktcnModel::new(train_config.model_config(10, 3), &mut rng).unwrap();
        let mut state = TrainState::new(&model.parameters().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
        state.step = 7;
        state.loss_history = vec![1.5, 1.25, 0.875];
        state.m[0].data_mut()[0] = 0.125;
        state.epochs.push(EpochLog {
            epoch: 1,
            train_loss: 1.2,
            val_macro_f1: 0.4,
            wall_ms: 0,
        });
        let pca = PcaModel {
            mean: vec![0.5, -1.0],
            scale: vec![2.0, 1.0],
            components: Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap(),
            explained_ratio: vec![0.97],
        };
        Checkpoint {
            model,
            state,
            train_config,
            preprocess: PreprocessConfig::default(),
            pca,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for head in [HeadKind::Kan, HeadKind::Dense] {
            let c = sample(head);
            let bytes = c.encode();
            let back = Checkpoint::decode(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn header_fields() {
        let c = sample(HeadKind::Kan);
        let bytes = c.encode();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), c.config_hash());
    }

    #[test]
    fn truncation_and_corruption_are_errors() {
        let bytes = sample(HeadKind::Kan).encode();
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Checkpoint(_))));
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::decode(&flipped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let mut bytes = sample(HeadKind::Kan).encode();
        bytes[8] = 9;
        let body_len = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
