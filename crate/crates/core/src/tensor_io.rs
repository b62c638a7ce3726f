//! Host-side tensors and their on-disk form: a flat little-endian `f32`
//! payload next to a JSON sidecar `{shape, dtype, order}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

impl HostTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Argument(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Size of the leading (time) axis.
    pub fn len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of scalars in one leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        let w = self.row_len();
        &mut self.data[t * w..(t + 1) * w]
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            shape: self.shape.clone(),
            dtype: "f32".into(),
            order: "row-major".into(),
        }
    }
}

/// Paths of the payload and sidecar for a tensor stem.
pub fn tensor_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let mut bin = stem.as_os_str().to_owned();
    bin.push(".f32");
    let mut json = stem.as_os_str().to_owned();
    json.push(".json");
    (PathBuf::from(bin), PathBuf::from(json))
}

pub fn write_tensor(stem: &Path, t: &HostTensor) -> Result<()> {
    let (bin, json) = tensor_paths(stem);
    if let Some(parent) = bin.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = Vec::with_capacity(t.data.len() * 4);
    for v in &t.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let sidecar = serde_json::to_string(&t.sidecar())?;
    fs::write(&json, sidecar).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_tensor(stem: &Path) -> Result<HostTensor> {
    let (bin, json) = tensor_paths(stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&json, e.to_string()))?;
    if sidecar.dtype != "f32" || sidecar.order != "row-major" {
        return Err(Error::format(
            &json,
            format!("unsupported dtype/order {}/{}", sidecar.dtype, sidecar.order),
        ));
    }
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::format(
            &bin,
            format!("expected {} bytes for shape {:?}, found {}", n * 4, sidecar.shape, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(HostTensor {
        shape: sidecar.shape,
        data,
    })
}
