//! Synthetic three-view multi-label data with a known latent cause.
//!
//! A latent `t ~ N(0, I_k)` drives both hemispheres through fixed random
//! linear maps plus Gaussian noise. Label `c` fires with probability
//! `σ(w_c·t + b_c)`; the `w_c` of one label group share a common direction,
//! which produces co-occurrence within groups. Biases are set from the
//! probit approximation of the logistic-normal mean so that label `c` has
//! marginal rate close to its target.

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Provenance, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, Rng};
use crate::roipool::{Hemisphere, RoiTable, VoxelInfo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub view_dim: usize,
    pub n_labels: usize,
    pub latent_dim: usize,
    pub n_groups: usize,
    /// Standard deviation of the additive view noise.
    pub noise: f64,
    /// Mean positive rate over labels; individual labels range over
    /// `[0.5, 1.5]` times this.
    pub density: f64,
    /// Norm of each label's weight vector on the latent.
    pub label_signal: f64,
    /// Labels are `1[w·t + b > 0]` instead of Bernoulli draws.
    pub deterministic_labels: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The `synth-27` benchmark.
    fn default() -> Self {
        Self {
            n_samples: 2000,
            view_dim: 128,
            n_labels: 27,
            latent_dim: 8,
            n_groups: 3,
            noise: 1.0,
            density: 0.17,
            label_signal: 3.0,
            deterministic_labels: false,
            seed: 27,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_samples", self.n_samples),
            ("view_dim", self.view_dim),
            ("n_labels", self.n_labels),
            ("latent_dim", self.latent_dim),
            ("n_groups", self.n_groups),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic.{name} must be positive")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("synthetic.noise must be non-negative".into()));
        }
        if !(self.density > 0.0 && self.density * 1.5 < 1.0) {
            return Err(Error::Config("synthetic.density must lie in (0, 2/3)".into()));
        }
        if !(self.label_signal >= 0.0 && self.label_signal.is_finite()) {
            return Err(Error::Config("synthetic.label_signal must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generator internals kept for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[N×k]` latents.
    pub latent: Vec<Vec<f64>>,
    pub label_weights: Vec<Vec<f64>>,
    pub label_bias: Vec<f64>,
    pub label_group: Vec<usize>,
    pub target_rate: Vec<f64>,
    /// `[N×C]` firing probabilities.
    pub probability: Vec<Vec<f64>>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LabelModel {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    group: Vec<usize>,
    rate: Vec<f64>,
}

fn label_model(spec: &SyntheticSpec, rng: &mut Rng) -> LabelModel {
    let k = spec.latent_dim;
    let c = spec.n_labels;
    let group_dir: Vec<Vec<f64>> = (0..spec.n_groups).map(|_| (0..k).map(|_| rng.normal()).collect()).collect();
    let mut rank: Vec<usize> = (0..c).collect();
    rng.shuffle(&mut rank);
    let mut weights = Vec::with_capacity(c);
    let mut bias = Vec::with_capacity(c);
    let mut group = Vec::with_capacity(c);
    let mut rate = Vec::with_capacity(c);
    for j in 0..c {
        let g = j % spec.n_groups;
        let own: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let raw: Vec<f64> = group_dir[g].iter().zip(&own).map(|(a, b)| 0.85 * a + 0.5 * b).collect();
        let norm = dot(&raw, &raw).sqrt().max(1e-12);
        let w: Vec<f64> = raw.iter().map(|v| v * spec.label_signal / norm).collect();
        let spread = if c > 1 { rank[j] as f64 / (c - 1) as f64 } else { 0.5 };
        let rho = spec.density * (0.5 + spread);
        let s2 = dot(&w, &w);
        let b = if spec.deterministic_labels {
            // P(w·t + b > 0) = Φ(b / ‖w‖).
            probit(rho) * s2.sqrt()
        } else {
            logit(rho) * (1.0 + std::f64::consts::PI * s2 / 8.0).sqrt()
        };
        weights.push(w);
        bias.push(b);
        group.push(g);
        rate.push(rho);
    }
    LabelModel {
        weights,
        bias,
        group,
        rate,
    }
}

fn probit(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Latents, labels and ground truth shared by both generators.
fn draw_latents_and_labels(spec: &SyntheticSpec, model: &LabelModel, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<u8>, Vec<Vec<f64>>) {
    let mut latent = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples * spec.n_labels);
    let mut prob = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let t: Vec<f64> = (0..spec.latent_dim).map(|_| rng.normal()).collect();
        let mut p_row = Vec::with_capacity(spec.n_labels);
        for (w, b) in model.weights.iter().zip(&model.bias) {
            let a = dot(w, &t) + b;
            let p = sigmoid(a);
            let u = rng.uniform();
            let y = if spec.deterministic_labels { a > 0.0 } else { p > u };
            labels.push(u8::from(y));
            p_row.push(p);
        }
        latent.push(t);
        prob.push(p_row);
    }
    (latent, labels, prob)
}

fn as_f32(v: f64) -> f32 {
    v as f32
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut maps_rng = root.fork("maps");
    let mut label_rng = root.fork("labels");
    let mut sample_rng = root.fork("samples");
    let mut noise_rng = root.fork("noise");
    let (d, k) = (spec.view_dim, spec.latent_dim);
    let scale = 1.0 / (k as f64).sqrt();
    let mut map = || -> Vec<Vec<f64>> { (0..d).map(|_| (0..k).map(|_| maps_rng.normal() * scale).collect()).collect() };
    let a_left = map();
    let a_right = map();
    let model = label_model(spec, &mut label_rng);
    let (latent, labels, probability) = draw_latents_and_labels(spec, &model, &mut sample_rng);
    let mut left = Vec::with_capacity(spec.n_samples * d);
    let mut right = Vec::with_capacity(spec.n_samples * d);
    for t in &latent {
        for row in &a_left {
            left.push(as_f32(dot(row, t) + spec.noise * noise_rng.normal()));
        }
        for row in &a_right {
            right.push(as_f32(dot(row, t) + spec.noise * noise_rng.normal()));
        }
    }
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        n_samples: spec.n_samples,
        d_left: d,
        d_right: d,
        n_labels: spec.n_labels,
        label_names: (0..spec.n_labels).map(|j| format!("label{j:02}")).collect(),
        threshold: None,
        provenance: Provenance::Synthetic,
        n_roif: None,
        atlas_hash: None,
        has_ratings: false,
        raw_dim: None,
        synthetic: Some(spec.clone()),
    };
    let ds = Dataset {
        meta,
        left,
        right,
        labels,
        ratings: None,
        raw: None,
    };
    ds.validate()?;
    let truth = GroundTruth {
        latent,
        label_weights: model.weights,
        label_bias: model.bias,
        label_group: model.group,
        target_rate: model.rate,
        probability,
    };
    Ok((ds, truth))
}

/// Voxel-level synthetic data for the pooling pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelSynthetic {
    pub table: RoiTable,
    /// `[N × n_voxels]`, columns by voxel id.
    pub activity: Vec<f32>,
    pub labels: Vec<u8>,
    pub truth: GroundTruth,
}

/// `rois_per_hemisphere` cubic ROIs of side `roi_side` voxels per
/// hemisphere. Each octant of an ROI loads on its own latent direction, so
/// pooling with `n_roif = 8` recovers `8 × rois_per_hemisphere` informative
/// features per hemisphere. `spec.view_dim` is ignored.
pub fn generate_synthetic_voxels(spec: &SyntheticSpec, rois_per_hemisphere: usize, roi_side: u32) -> Result<VoxelSynthetic> {
    spec.validate()?;
    if rois_per_hemisphere == 0 || roi_side < 2 {
        return Err(Error::Config("voxel synthesis needs ≥ 1 ROI and ROI side ≥ 2".into()));
    }
    let root = Rng::new(spec.seed);
    let mut maps_rng = root.fork("voxel-maps");
    let mut label_rng = root.fork("labels");
    let mut sample_rng = root.fork("samples");
    let mut noise_rng = root.fork("voxel-noise");
    let k = spec.latent_dim;
    let scale = 1.0 / (k as f64).sqrt();
    let mut voxels = Vec::new();
    let mut loadings: Vec<Vec<f64>> = Vec::new();
    let half = roi_side / 2;
    for (h_idx, h) in [Hemisphere::Left, Hemisphere::Right].into_iter().enumerate() {
        for r in 0..rois_per_hemisphere {
            let octants: Vec<Vec<f64>> = (0..8).map(|_| (0..k).map(|_| maps_rng.normal() * scale).collect()).collect();
            // ROIs sit side by side along x on a coarse grid.
            let origin = (r as u32) * (roi_side + 1);
            for x in 0..roi_side {
                for y in 0..roi_side {
                    for z in 0..roi_side {
                        let oct = usize::from(x >= half) * 4 + usize::from(y >= half) * 2 + usize::from(z >= half);
                        voxels.push(VoxelInfo {
                            voxel_id: voxels.len(),
                            roi_id: (h_idx * 1000 + r) as u32,
                            hemisphere: h,
                            coord: [origin + x, y, z],
                        });
                        loadings.push(octants[oct].clone());
                    }
                }
            }
        }
    }
    let model = label_model(spec, &mut label_rng);
    let (latent, labels, probability) = draw_latents_and_labels(spec, &model, &mut sample_rng);
    let mut activity = Vec::with_capacity(spec.n_samples * voxels.len());
    for t in &latent {
        for l in &loadings {
            activity.push(as_f32(dot(l, t) + spec.noise * noise_rng.normal()));
        }
    }
    Ok(VoxelSynthetic {
        table: RoiTable { voxels },
        activity,
        labels,
        truth: GroundTruth {
            latent,
            label_weights: model.weights,
            label_bias: model.bias,
            label_group: model.group,
            target_rate: model.rate,
            probability,
        },
    })
}
