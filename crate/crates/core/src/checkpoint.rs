//! Parameter checkpoints: one `.muvt` file per tensor plus `index.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthvid::io::{read_tensor_file, write_tensor_file, DType, TensorFileError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    File(#[from] TensorFileError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint index {path}: {msg}")]
    Index { path: String, msg: String },
    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct Index {
    /// Free-form model description stored next to the tensors.
    meta: serde_json::Value,
    files: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `params` into `dir` (created if needed). Files are named by position
/// so parameter names never have to be valid file names.
pub fn save(dir: &Path, meta: serde_json::Value, params: &[(String, &Tensor)]) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = BTreeMap::new();
    for (i, (name, t)) in params.iter().enumerate() {
        let file = format!("p{i:03}.muvt");
        write_tensor_file(&dir.join(&file), t, DType::F64)?;
        files.insert(name.clone(), file);
    }
    let index = Index { meta, files };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub struct Loaded {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Loaded {
    /// Remove `name`, checking its shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, CheckpointError> {
        let t = self
            .tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if t.shape() != shape {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }
}

pub fn load(dir: &Path) -> Result<Loaded, CheckpointError> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| CheckpointError::Index {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut tensors = BTreeMap::new();
    for (name, file) in index.files {
        if file.contains('/') || file.contains("..") {
            return Err(CheckpointError::Index {
                path: path.display().to_string(),
                msg: format!("illegal file name {file}"),
            });
        }
        tensors.insert(name, read_tensor_file(&dir.join(file))?);
    }
    Ok(Loaded {
        meta: index.meta,
        tensors,
    })
}
