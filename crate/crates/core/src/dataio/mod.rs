//! On-disk datasets, rating thresholds, splits, standardization and the
//! synthetic generator.
//!
//! A dataset directory holds `meta.json` plus little-endian row-major
//! arrays: `features_left.f32`, `features_right.f32`, `labels.u8`,
//! optionally `ratings.f32` and `raw_left.f32`/`raw_right.f32`. The
//! difference view is never stored; it is derived on load.

mod binio;
mod splits;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use binio::{read_f32_le, read_u8, write_f32_le, write_u8};
pub use splits::{make_splits, DataConfig, Split, SplitScheme, Splits};
pub use synth::{generate_synthetic, generate_synthetic_voxels, GroundTruth, SyntheticSpec, VoxelSynthetic};

use crate::bvae::ViewBatch;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    PooledReal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_samples: usize,
    pub d_left: usize,
    pub d_right: usize,
    pub n_labels: usize,
    pub label_names: Vec<String>,
    /// Rating threshold the labels were derived with, if any.
    pub threshold: Option<f64>,
    pub provenance: Provenance,
    pub n_roif: Option<usize>,
    /// SHA-256 of the ROI assignment table.
    pub atlas_hash: Option<String>,
    pub has_ratings: bool,
    /// Per-hemisphere width of the raw voxel arrays, when stored.
    pub raw_dim: Option<usize>,
    /// Generator settings for synthetic data.
    pub synthetic: Option<SyntheticSpec>,
}

/// Optional raw voxel views used by the no-pooling ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawViews {
    pub dim: usize,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub labels: Vec<u8>,
    pub ratings: Option<Vec<f32>>,
    pub raw: Option<RawViews>,
}

const META: &str = "meta.json";
const LEFT: &str = "features_left.f32";
const RIGHT: &str = "features_right.f32";
const LABELS: &str = "labels.u8";
const RATINGS: &str = "ratings.f32";
const RAW_LEFT: &str = "raw_left.f32";
const RAW_RIGHT: &str = "raw_right.f32";

impl Dataset {
    /// Checks every array against the meta block.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let bad = |what: &str| Err(Error::Input(format!("dataset inconsistent with meta: {what}")));
        if m.d_left != m.d_right {
            return bad("left and right widths differ");
        }
        if m.d_left == 0 || m.n_labels == 0 {
            return bad("zero feature or label width");
        }
        if self.left.len() != m.n_samples * m.d_left || self.right.len() != m.n_samples * m.d_right {
            return bad("feature array lengths");
        }
        if self.labels.len() != m.n_samples * m.n_labels {
            return bad("label array length");
        }
        if self.labels.iter().any(|&y| y > 1) {
            return bad("labels must be 0 or 1");
        }
        if m.label_names.len() != m.n_labels {
            return bad("label_names length");
        }
        if m.has_ratings != self.ratings.is_some() {
            return bad("has_ratings flag");
        }
        if let Some(r) = &self.ratings {
            if r.len() != m.n_samples * m.n_labels {
                return bad("ratings array length");
            }
        }
        match (&self.raw, m.raw_dim) {
            (None, None) => {}
            (Some(raw), Some(d)) if raw.dim == d && raw.left.len() == m.n_samples * d && raw.right.len() == m.n_samples * d => {}
            _ => return bad("raw voxel arrays"),
        }
        if self.left.iter().chain(&self.right).any(|v| !v.is_finite()) {
            return bad("non-finite feature values");
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.meta.n_samples
    }

    pub fn width(&self) -> usize {
        self.meta.d_left
    }

    pub fn n_labels(&self) -> usize {
        self.meta.n_labels
    }

    pub fn left_row(&self, i: usize) -> &[f32] {
        let d = self.width();
        &self.left[i * d..(i + 1) * d]
    }

    pub fn right_row(&self, i: usize) -> &[f32] {
        let d = self.width();
        &self.right[i * d..(i + 1) * d]
    }

    /// `x_d = x_l − x_r` at storage precision.
    pub fn diff_row(&self, i: usize) -> Vec<f32> {
        self.left_row(i).iter().zip(self.right_row(i)).map(|(l, r)| l - r).collect()
    }

    pub fn label_row(&self, i: usize) -> &[u8] {
        let c = self.n_labels();
        &self.labels[i * c..(i + 1) * c]
    }

    pub fn label_rows(&self, rows: &[usize]) -> Vec<Vec<u8>> {
        rows.iter().map(|&i| self.label_row(i).to_vec()).collect()
    }

    /// Copy whose feature views are the raw voxel arrays.
    pub fn with_raw_features(&self) -> Result<Self> {
        let raw = self.raw.as_ref().ok_or_else(|| {
            Error::Input("the no_roip variant needs raw voxel arrays (raw_left.f32/raw_right.f32) in the dataset".into())
        })?;
        let mut out = self.clone();
        out.meta.d_left = raw.dim;
        out.meta.d_right = raw.dim;
        out.left = raw.left.clone();
        out.right = raw.right.clone();
        out.meta.n_roif = None;
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        std::fs::write(dir.join(META), meta + "\n").map_err(|e| Error::io(dir.join(META), e))?;
        write_f32_le(&dir.join(LEFT), &self.left)?;
        write_f32_le(&dir.join(RIGHT), &self.right)?;
        write_u8(&dir.join(LABELS), &self.labels)?;
        if let Some(r) = &self.ratings {
            write_f32_le(&dir.join(RATINGS), r)?;
        }
        if let Some(raw) = &self.raw {
            write_f32_le(&dir.join(RAW_LEFT), &raw.left)?;
            write_f32_le(&dir.join(RAW_RIGHT), &raw.right)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::data(&meta_path, e.to_string()))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::data(
                &meta_path,
                format!("unsupported format_version {} (expected {FORMAT_VERSION})", meta.format_version),
            ));
        }
        let n = meta.n_samples;
        let left = read_f32_le(&dir.join(LEFT), Some(n * meta.d_left))?;
        let right = read_f32_le(&dir.join(RIGHT), Some(n * meta.d_right))?;
        let labels = read_u8(&dir.join(LABELS), n * meta.n_labels)?;
        let ratings = if meta.has_ratings {
            Some(read_f32_le(&dir.join(RATINGS), Some(n * meta.n_labels))?)
        } else {
            None
        };
        let raw = match meta.raw_dim {
            Some(d) => Some(RawViews {
                dim: d,
                left: read_f32_le(&dir.join(RAW_LEFT), Some(n * d))?,
                right: read_f32_le(&dir.join(RAW_RIGHT), Some(n * d))?,
            }),
            None => None,
        };
        let ds = Self {
            meta,
            left,
            right,
            labels,
            ratings,
            raw,
        };
        ds.validate().map_err(|e| Error::data(dir, e.to_string()))?;
        Ok(ds)
    }

    /// Three-view batch of `rows`, optionally standardized.
    pub fn views<T: Scalar>(&self, rows: &[usize], standardizer: Option<&Standardizer>) -> Result<ViewBatch<T>> {
        let d = self.width();
        if let Some(s) = standardizer {
            if s.width() != d {
                return Err(Error::dim("standardizer", &[d], &[s.width()]));
            }
        }
        let gather = |src: &[f32], hemi: usize| -> Result<Tensor<T>> {
            let mut out = Vec::with_capacity(rows.len() * d);
            for &i in rows {
                let row = &src[i * d..(i + 1) * d];
                match standardizer {
                    Some(s) => out.extend(
                        row.iter()
                            .enumerate()
                            .map(|(j, &v)| T::from_f64_lossy((f64::from(v) - s.mean[hemi][j]) / s.scale[hemi][j])),
                    ),
                    None => out.extend(row.iter().map(|&v| T::from_f64_lossy(f64::from(v)))),
                }
            }
            Tensor::matrix(rows.len(), d, out)
        };
        ViewBatch::from_hemispheres(gather(&self.left, 0)?, gather(&self.right, 1)?)
    }

    pub fn labels_tensor<T: Scalar>(&self, rows: &[usize]) -> Tensor<T> {
        let c = self.n_labels();
        let data = rows
            .iter()
            .flat_map(|&i| self.label_row(i).iter().map(|&y| if y == 1 { T::one() } else { T::zero() }))
            .collect();
        Tensor::matrix(rows.len(), c, data).expect("row count times label width")
    }

    /// Fraction of positive cells per label over `rows`.
    pub fn label_frequencies(&self, rows: &[usize]) -> Vec<f64> {
        let c = self.n_labels();
        let mut f = vec![0.0; c];
        for &i in rows {
            for (j, &y) in self.label_row(i).iter().enumerate() {
                f[j] += f64::from(y);
            }
        }
        f.iter().map(|v| v / rows.len().max(1) as f64).collect()
    }
}

/// `y = 1` exactly where `rating > tau`, compared at the `f32` storage
/// precision of the ratings.
pub fn threshold_ratings(ratings: &[f32], tau: f64) -> Result<Vec<u8>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("threshold must lie in [0, 1), got {tau}")));
    }
    if let Some(r) = ratings.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Input(format!("rating {r} outside [0, 1]")));
    }
    let tau = tau as f32;
    Ok(ratings.iter().map(|&r| u8::from(r > tau)).collect())
}

/// Per-feature affine normalization fitted on training rows; the
/// difference view is derived after normalizing each hemisphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `[left, right]` feature means.
    pub mean: [Vec<f64>; 2],
    /// `[left, right]` divisors; 1 for constant features.
    pub scale: [Vec<f64>; 2],
}

impl Standardizer {
    pub fn fit(ds: &Dataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("cannot fit a standardizer on zero rows".into()));
        }
        let d = ds.width();
        let n = rows.len() as f64;
        let stats = |src: &[f32]| {
            let mut mean = vec![0.0; d];
            for &i in rows {
                for (m, &v) in mean.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for &i in rows {
                for ((s, &v), m) in var.iter_mut().zip(&src[i * d..(i + 1) * d]).zip(&mean) {
                    *s += (f64::from(v) - m).powi(2);
                }
            }
            let scale = var
                .iter()
                .map(|s| {
                    let sd = (s / n).sqrt();
                    if sd > 1e-8 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect::<Vec<_>>();
            (mean, scale)
        };
        let (ml, sl) = stats(&ds.left);
        let (mr, sr) = stats(&ds.right);
        Ok(Self {
            mean: [ml, mr],
            scale: [sl, sr],
        })
    }

    /// Leaves features unchanged.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: [vec![0.0; d], vec![0.0; d]],
            scale: [vec![1.0; d], vec![1.0; d]],
        }
    }

    pub fn width(&self) -> usize {
        self.mean[0].len()
    }
}
