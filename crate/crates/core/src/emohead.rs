//! Multi-label head: per-label classifiers, label-specific representations,
//! one masked self-attention pass across labels, and the asymmetric focal
//! loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Linear, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Probabilities closer than this to 0 or 1 are clamped before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Query/key width; `None` means the latent width.
    pub d_prime: Option<usize>,
    pub bias: bool,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_prime: None,
            bias: true,
            gamma_pos: 0.0,
            gamma_neg: 1.0,
        }
    }
}

/// Label co-occurrence statistics of a training label matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMask {
    /// `mask[j][k] = N_jk / N_j`; rows with `N_j = 0` are zero.
    pub mask: Tensor<f64>,
    pub counts: Vec<u64>,
    pub pair_counts: Vec<Vec<u64>>,
}

impl CooccurrenceMask {
    pub fn n_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn zeros(c: usize) -> Self {
        Self {
            mask: Tensor::zeros(&[c, c]),
            counts: vec![0; c],
            pair_counts: vec![vec![0; c]; c],
        }
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.mask.at(j, k)
    }

    /// Whitespace-separated text matrix, one label per line.
    pub fn to_text(&self) -> String {
        let c = self.n_labels();
        let mut out = format!("# cooccurrence mask {c}x{c}\n");
        for j in 0..c {
            let row: Vec<String> = self.mask.row(j).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parses [`CooccurrenceMask::to_text`] output. Counts are not stored
    /// in the text form and come back as zero.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::Input(format!("mask line {}: {e}", i + 1)))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Input("mask text is not square".into()));
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("mask entries must lie in [0, 1]".into()));
        }
        Ok(Self {
            mask: Tensor::from_rows(&rows)?,
            counts: vec![0; c],
            pair_counts: vec![vec![0; c]; c],
        })
    }
}

/// Counts label occurrences and co-occurrences over binary rows.
pub fn build_mask(labels: &[Vec<u8>]) -> Result<CooccurrenceMask> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Input("build_mask needs at least one training sample".into()))?;
    let c = first.len();
    let mut counts = vec![0u64; c];
    let mut pair = vec![vec![0u64; c]; c];
    for row in labels {
        if row.len() != c {
            return Err(Error::dim("build_mask", &[c], &[row.len()]));
        }
        for j in 0..c {
            if row[j] == 0 {
                continue;
            }
            counts[j] += 1;
            for k in 0..c {
                if row[k] != 0 {
                    pair[j][k] += 1;
                }
            }
        }
    }
    let mut mask = Tensor::zeros(&[c, c]);
    for j in 0..c {
        if counts[j] == 0 {
            continue;
        }
        for k in 0..c {
            mask.data_mut()[j * c + k] = pair[j][k] as f64 / counts[j] as f64;
        }
    }
    Ok(CooccurrenceMask {
        mask,
        counts,
        pair_counts: pair,
    })
}

/// Parameters of the label-attention head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    /// Per-label classifiers `[C×D]` (+ bias `[C]`).
    pub omega1: Linear,
    pub omega_q: ParamId,
    pub omega_k: ParamId,
    pub omega_v: ParamId,
    /// Per-label output weights `[C×D]`.
    pub omega_g: ParamId,
    pub omega_g_bias: Option<ParamId>,
    pub latent_dim: usize,
    pub n_labels: usize,
    pub d_prime: usize,
}

/// Tape handles of one head evaluation.
#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub p1: Var,
    pub p2: Var,
    pub p: Var,
    pub attention: Var,
}

impl HeadParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        latent_dim: usize,
        n_labels: usize,
        cfg: &HeadConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_labels < 2 {
            return Err(Error::Config(format!("need at least 2 labels, got {n_labels}")));
        }
        let d_prime = cfg.d_prime.unwrap_or(latent_dim);
        if d_prime == 0 || latent_dim == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        let omega1 = Linear::new(store, "head.omega1", latent_dim, n_labels, cfg.bias, rng)?;
        let omega_q = store.insert_uniform("head.omega_q", &[latent_dim, d_prime], latent_dim, rng)?;
        let omega_k = store.insert_uniform("head.omega_k", &[latent_dim, d_prime], latent_dim, rng)?;
        let omega_v = store.insert_uniform("head.omega_v", &[latent_dim, latent_dim], latent_dim, rng)?;
        let omega_g = store.insert_uniform("head.omega_g", &[n_labels, latent_dim], latent_dim, rng)?;
        let omega_g_bias = if cfg.bias {
            Some(store.insert_uniform("head.omega_g.bias", &[n_labels], latent_dim, rng)?)
        } else {
            None
        };
        Ok(Self {
            omega1,
            omega_q,
            omega_k,
            omega_v,
            omega_g,
            omega_g_bias,
            latent_dim,
            n_labels,
            d_prime,
        })
    }

    /// Label-aware module on a `[B×D]` latent batch: `p1 = σ(z·ω1ᵀ + b)`
    /// and `Z[b·C + c] = z_b ⊙ ω1_c`.
    pub fn label_aware_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
    ) -> Result<(Var, Var)> {
        let logits = self.omega1.forward(tape, store, z)?;
        let p1 = tape.sigmoid(logits);
        let w1 = tape.param(store, self.omega1.weight);
        let zz = tape.repeat_hadamard(z, w1)?;
        Ok((p1, zz))
    }

    /// Masked self-attention over the `C` label rows of each sample.
    /// `mask` is a `[C×C]` node; `None` runs plain scaled dot-product
    /// attention. Returns `(p2 [B×C], A [B·C×C])`.
    pub fn masked_attention_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        zz: Var,
        mask: Option<Var>,
        batch: usize,
    ) -> Result<(Var, Var)> {
        let wq = tape.param(store, self.omega_q);
        let wk = tape.param(store, self.omega_k);
        let wv = tape.param(store, self.omega_v);
        let q = tape.matmul(zz, wq)?;
        let k = tape.matmul(zz, wk)?;
        let v = tape.matmul(zz, wv)?;
        let raw = tape.batch_matmul_nt(q, k, batch)?;
        let scores = tape.scale(raw, T::from_f64_lossy(1.0 / (self.d_prime as f64).sqrt()));
        let scores = match mask {
            Some(m) => tape.add_tiled(scores, m)?,
            None => scores,
        };
        let a = tape.softmax_rows(scores)?;
        let refined = tape.batch_matmul(a, v, batch)?;
        let wg = tape.param(store, self.omega_g);
        let mut logits = tape.row_dot_tiled(refined, wg)?;
        if let Some(b) = self.omega_g_bias {
            let bv = tape.param(store, b);
            logits = tape.add_bias(logits, bv)?;
        }
        Ok((tape.sigmoid(logits), a))
    }

    /// Full head: `p = (p1 + p2) / 2`.
    pub fn forward_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
        mask: Option<Var>,
    ) -> Result<HeadNodes> {
        let (b, d) = tape.value(z).dims2()?;
        if d != self.latent_dim {
            return Err(Error::dim("head input", &[self.latent_dim], &[d]));
        }
        if let Some(m) = mask {
            let shape = tape.value(m).shape();
            if shape != [self.n_labels, self.n_labels] {
                return Err(Error::dim("mask", &[self.n_labels, self.n_labels], shape));
            }
        }
        let (p1, zz) = self.label_aware_on_tape(tape, store, z)?;
        let (p2, attention) = self.masked_attention_on_tape(tape, store, zz, mask, b)?;
        let sum = tape.add(p1, p2)?;
        let p = tape.scale(sum, T::from_f64_lossy(0.5));
        Ok(HeadNodes { p1, p2, p, attention })
    }
}

/// Convenience evaluation of the whole head on one latent vector.
/// Returns `(p, p1, p2, A)`.
pub fn predict<T: Scalar>(
    head: &HeadParams,
    store: &ParamStore<T>,
    z: &[T],
    mask: &CooccurrenceMask,
) -> Result<(Vec<T>, Vec<T>, Vec<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
    let m = tape.constant(mask.mask.cast());
    let nodes = head.forward_on_tape(&mut tape, store, zv, Some(m))?;
    Ok((
        tape.value(nodes.p).data().to_vec(),
        tape.value(nodes.p1).data().to_vec(),
        tape.value(nodes.p2).data().to_vec(),
        tape.value(nodes.attention).clone(),
    ))
}

/// Label-aware module on one latent vector with explicit classifier
/// weights `[C×D]` and bias `[C]`. Returns `(p1, Z)`.
pub fn label_aware<T: Scalar>(z: &[T], omega1: &Tensor<T>, bias: &[T]) -> Result<(Vec<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
    let w = tape.constant(omega1.clone());
    let b = tape.constant(Tensor::vector(bias.to_vec()));
    let logits = tape.affine(zv, w, Some(b))?;
    let p1 = tape.sigmoid(logits);
    let zz = tape.repeat_hadamard(zv, w)?;
    Ok((tape.value(p1).data().to_vec(), tape.value(zz).clone()))
}

/// Explicit-weight attention for one sample. Returns `(p2, A)`.
pub struct AttentionWeights<'a, T> {
    pub omega_q: &'a Tensor<T>,
    pub omega_k: &'a Tensor<T>,
    pub omega_v: &'a Tensor<T>,
    pub omega_g: &'a Tensor<T>,
    pub omega_g_bias: &'a [T],
}

pub fn masked_attention<T: Scalar>(
    zz: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    w: &AttentionWeights<'_, T>,
) -> Result<(Vec<T>, Tensor<T>)> {
    let (c, _) = zz.dims2()?;
    let d_prime = w.omega_q.cols();
    let mut tape = Tape::new();
    let z = tape.constant(zz.clone());
    let wq = tape.constant(w.omega_q.clone());
    let wk = tape.constant(w.omega_k.clone());
    let wv = tape.constant(w.omega_v.clone());
    let q = tape.matmul(z, wq)?;
    let k = tape.matmul(z, wk)?;
    let v = tape.matmul(z, wv)?;
    let raw = tape.batch_matmul_nt(q, k, 1)?;
    let scores = tape.scale(raw, T::from_f64_lossy(1.0 / (d_prime as f64).sqrt()));
    let scores = match mask {
        Some(m) => {
            if m.shape() != [c, c] {
                return Err(Error::dim("mask", &[c, c], m.shape()));
            }
            let mv = tape.constant(m.clone());
            tape.add_tiled(scores, mv)?
        }
        None => scores,
    };
    let a = tape.softmax_rows(scores)?;
    let refined = tape.batch_matmul(a, v, 1)?;
    let wg = tape.constant(w.omega_g.clone());
    let logits = tape.row_dot_tiled(refined, wg)?;
    let bg = tape.constant(Tensor::vector(w.omega_g_bias.to_vec()));
    let logits = tape.add_bias(logits, bg)?;
    let p2 = tape.sigmoid(logits);
    Ok((tape.value(p2).data().to_vec(), tape.value(a).clone()))
}

/// Outcome of [`asymmetric_focal_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    /// Probabilities that had to be clamped into `[1e-7, 1 − 1e-7]`.
    pub clamped: usize,
}

/// Mean per-label asymmetric focal loss of one prediction vector.
pub fn asymmetric_focal_loss(p: &[f64], y: &[u8], gamma_pos: f64, gamma_neg: f64) -> Result<FocalLoss> {
    if p.len() != y.len() {
        return Err(Error::dim("asymmetric_focal_loss", &[y.len()], &[p.len()]));
    }
    let mut tape = Tape::<f64>::new();
    let pv = tape.constant(Tensor::matrix(1, p.len(), p.to_vec())?);
    let yt = Tensor::matrix(1, y.len(), y.iter().map(|&v| f64::from(v)).collect())?;
    let (loss, clamped) = tape.asymmetric_focal(pv, &yt, gamma_pos, gamma_neg, PROB_CLAMP)?;
    Ok(FocalLoss {
        value: tape.scalar(loss),
        clamped,
    })
}
