//! Binary checkpoint files.
//!
//! Layout: magic, format version (u32 LE), header length (u64 LE), JSON
//! header, every parameter as raw f64 LE in header order, the Adam first
//! and second moments in the same order, and a trailing SHA-256 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::numerics::{AdamState, Tensor};

pub const MAGIC: &[u8; 8] = b"SESSREC\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_p20: f64,
    pub valid_mrr20: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Training progress needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub next_epoch: usize,
    pub best_mrr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_without_improvement: usize,
    pub stopped: bool,
    /// History with wall times zeroed, so identical runs give identical files.
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: ModelDims,
    vocab: Vec<String>,
    corpus_hash: String,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    adam_step: u64,
    seed: u64,
    progress: TrainProgress,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub corpus_hash: String,
    pub params: ModelParams,
    pub adam: AdamState,
    pub progress: TrainProgress,
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            dims: self.params.dims,
            vocab: self.vocab.clone(),
            corpus_hash: self.corpus_hash.clone(),
            names: self.params.names.clone(),
            shapes: self.params.tensors.iter().map(|t| t.shape().to_vec()).collect(),
            adam_step: self.adam.step,
            seed: self.config.seed,
            progress: self.progress.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + self.params.num_scalars() * 24 + 64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in &self.params.tensors {
            put_f64s(&mut buf, t.data());
        }
        for m in self.adam.first.iter().chain(&self.adam.second) {
            put_f64s(&mut buf, m);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file is corrupt or truncated)"));
        }
        let mut pos = MAGIC.len();
        let version = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
        pos += 4;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        let hend = pos.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
        let header: Header = serde_json::from_slice(&body[pos..hend])?;
        pos = hend;

        let mut take = |n: usize| -> Result<Vec<f64>> {
            let end = pos.checked_add(n * 8).filter(|&e| e <= body.len()).ok_or_else(|| bad("payload truncated"))?;
            let v = body[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            pos = end;
            Ok(v)
        };
        let mut tensors = Vec::with_capacity(header.shapes.len());
        for shape in &header.shapes {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape.clone(), take(n)?)?);
        }
        let sizes: Vec<usize> = tensors.iter().map(Tensor::len).collect();
        let first = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        let second = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        if pos != body.len() {
            return Err(bad("trailing bytes after payload"));
        }
        let params = ModelParams::from_parts(header.dims, &header.names, tensors)?;
        if crate::training::model_dims(&header.config, header.vocab.len()) != header.dims {
            return Err(Error::Mismatch("checkpoint config disagrees with its stored parameter shapes".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            corpus_hash: header.corpus_hash,
            params,
            adam: AdamState { step: header.adam_step, first, second },
            progress: header.progress,
        })
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
