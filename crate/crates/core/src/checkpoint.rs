//! Model checkpoint file.
//!
//! Layout: the 8-byte magic `MLBVAECK`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! every parameter tensor as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{DataConfig, Standardizer};
use crate::emohead::CooccurrenceMask;
use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tensor};
use crate::objective::{ModelParams, ModelSpec, TrainConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"MLBVAECK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    train: Option<TrainConfig>,
    data: Option<DataConfig>,
    epochs_completed: usize,
    label_names: Vec<String>,
    mask: Vec<Vec<f64>>,
    standardizer: Option<Standardizer>,
    tensors: Vec<TensorEntry>,
}

/// Everything inference needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelParams<T>,
    pub train: Option<TrainConfig>,
    /// Split and standardization the model was trained under.
    pub data: Option<DataConfig>,
    pub epochs_completed: usize,
    pub label_names: Vec<String>,
    pub mask: CooccurrenceMask,
    pub standardizer: Option<Standardizer>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.mask.n_labels();
        let header = Header {
            spec: self.model.spec.clone(),
            train: self.train.clone(),
            data: self.data.clone(),
            epochs_completed: self.epochs_completed,
            label_names: self.label_names.clone(),
            mask: (0..c).map(|j| self.mask.mask.row(j).to_vec()).collect(),
            standardizer: self.standardizer.clone(),
            tensors: self
                .model
                .store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.model.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::Input(format!("checkpoint: {d}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        // Rebuild the layout, then overwrite every tensor.
        let mut model = ModelParams::<T>::new(header.spec.clone(), &mut Rng::new(0))?;
        if model.store.len() != header.tensors.len() {
            return Err(bad(format!(
                "{} tensors stored, layout expects {}",
                header.tensors.len(),
                model.store.len()
            )));
        }
        let mut offset = 20 + hlen;
        for entry in &header.tensors {
            let id = model
                .store
                .id(&entry.name)
                .ok_or_else(|| bad(format!("unknown tensor {:?}", entry.name)))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != entry.shape.as_slice() {
                return Err(Error::dim("checkpoint tensor", p.value.shape(), &entry.shape));
            }
            let n = p.value.len();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("truncated data for {:?}", entry.name)))?;
            for (dst, c) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = T::from_f64_lossy(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
            }
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
        }
        let c = header.spec.n_labels;
        if header.mask.len() != c || header.mask.iter().any(|r| r.len() != c) {
            return Err(bad("mask shape does not match label count".into()));
        }
        let mut mask = CooccurrenceMask::zeros(c);
        mask.mask = Tensor::from_rows(&header.mask)?;
        Ok(Self {
            model,
            train: header.train,
            data: header.data,
            epochs_completed: header.epochs_completed,
            label_names: header.label_names,
            mask,
            standardizer: header.standardizer,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Input(d) => Error::data(path, d),
            other => other,
        })
    }

    /// Mask as a model-precision tensor.
    pub fn mask_tensor(&self) -> Tensor<T> {
        self.mask.mask.cast()
    }
}
