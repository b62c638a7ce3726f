//! Versioned single-file checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, then every tensor as little-endian `f32` at its recorded offset.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{AvModel, ModelConfig, ParamStore, Task};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"AVRBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const CODEBOOK: &str = "codebook";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
    pub codebook: Option<Tensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &AvModel, codebook: Option<&Tensor>, meta: serde_json::Value) -> Result<Self> {
        Ok(Self {
            config: model.config.clone(),
            tensors: model.store.snapshot()?,
            codebook: codebook.map(|c| c.detach()),
            meta,
        })
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    /// Heads present in the checkpoint.
    pub fn tasks(&self) -> Vec<Task> {
        Task::ALL
            .into_iter()
            .filter(|t| self.has_prefix(&format!("heads.{}.", t.key())))
            .collect()
    }

    /// Rebuild the model with every stored module.
    pub fn to_model(&self, dtype: DType) -> Result<AvModel> {
        let store = ParamStore::from_tensors(self.tensors.clone(), dtype)?;
        let tasks = self.tasks();
        AvModel::build(self.config.clone(), store, &tasks, self.has_prefix("decoder."))
    }

    /// Drop uptraining heads and the codebook.
    pub fn export_for_finetune(mut self) -> Self {
        self.tensors.retain(|k, _| !k.starts_with("heads."));
        self.codebook = None;
        self
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, t: &Tensor| -> Result<()> {
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            offset: payload.len(),
        });
        for x in data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        Ok(())
    };
    for (name, t) in &ckpt.tensors {
        push(name, t)?;
    }
    if let Some(cb) = &ckpt.codebook {
        push(CODEBOOK, cb)?;
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model_config: ckpt.config.clone(),
        tensors: entries,
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = |b: &[u8]| f.write_all(b).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(header.len() as u64).to_le_bytes())?;
    write(&header)?;
    write(&payload)?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let fail = |m: &str| Error::format(path, m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fail("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body]).map_err(|e| fail(&format!("bad header: {e}")))?;
    let payload = &bytes[body..];
    let mut tensors = BTreeMap::new();
    let mut codebook = None;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > payload.len() {
            return Err(fail(&format!("tensor {} extends past end of file", e.name)));
        }
        let data: Vec<f32> = payload[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(data, e.shape.as_slice(), &Device::Cpu)?;
        if e.name == CODEBOOK {
            codebook = Some(t);
        } else {
            tensors.insert(e.name.clone(), t);
        }
    }
    header.model_config.validate()?;
    Ok(Checkpoint {
        config: header.model_config,
        tensors,
        codebook,
        meta: header.meta,
    })
}
