//! Checkpoint wire format:
//!
//! ```text
//! "FRXA1" | header length: u32 LE | JSON header | f32 LE data, manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::{InputSpec, Normalization};
use crate::error::{Error, Result};
use crate::imaging::write_bytes;
use crate::models::{Architecture, Model};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 5] = b"FRXA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub final_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub selected_run: usize,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    id: String,
    shape: [usize; 4],
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    class_names: Vec<String>,
    normalization: Normalization,
    input: InputSpec,
    best_test_accuracy: f64,
    summary: TrainSummary,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to preprocess inputs for it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub class_names: Vec<String>,
    pub normalization: Normalization,
    pub input: InputSpec,
    pub best_test_accuracy: f64,
    pub summary: TrainSummary,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        class_names: Vec<String>,
        normalization: Normalization,
        input: InputSpec,
        best_test_accuracy: f64,
        summary: TrainSummary,
    ) -> Self {
        Checkpoint {
            architecture: model.architecture().clone(),
            class_names,
            normalization,
            input,
            best_test_accuracy,
            summary,
            params: model.params.clone(),
        }
    }

    /// Rebuilds the network and loads the stored parameters into it.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = Model::build(self.architecture.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture declares {} tensors, checkpoint holds {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in model.params.iter_mut().zip(self.params.iter()) {
            if dst.id != src.id || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {} does not match architecture tensor `{}` {}",
                    src.id,
                    src.value.shape(),
                    dst.id,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization,
            input: self.input,
            best_test_accuracy: self.best_test_accuracy,
            summary: self.summary.clone(),
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry {
                    id: p.id.clone(),
                    shape: p.value.shape().dims(),
                    trainable: p.trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let data_len: usize = self.params.iter().map(|p| p.value.len() * 4).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing FRXA1 magic"));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut params = ParamStore::new();
        let mut data = &bytes[9 + len..];
        for entry in &header.tensors {
            let [n, c, h, w] = entry.shape;
            let shape = Shape::new(n, c, h, w);
            let (raw, rest) = data
                .split_at_checked(shape.len() * 4)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for `{}`", entry.id)))?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params.add(entry.id.clone(), Tensor::from_vec(shape, values)?, entry.trainable)?;
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint {
            architecture: header.architecture,
            class_names: header.class_names,
            normalization: header.normalization,
            input: header.input,
            best_test_accuracy: header.best_test_accuracy,
            summary: header.summary,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
