use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bvae::{Bvae, BvaeConfig, ElboNodes, Subset, View, ViewBatch, NoiseBank};
use crate::emohead::{HeadConfig, HeadParams, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::ndcore::{Linear, Mlp, ParamStore, Rng, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Deterministic per-view encoders, concatenated; no ELBO terms.
    NoBvae,
    /// Single affine + sigmoid classifier instead of the attention head.
    NoMlc,
    /// Keep only the joint ELBO.
    NoExtraElbos,
    /// Drop the co-occurrence mask from the attention scores.
    NoMask,
    /// Train on raw voxel features instead of ROI-pooled ones.
    NoRoip,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoBvae,
        Ablation::NoMlc,
        Ablation::NoExtraElbos,
        Ablation::NoMask,
        Ablation::NoRoip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoBvae => "no_bvae",
            Ablation::NoMlc => "no_mlc",
            Ablation::NoExtraElbos => "no_extra_elbos",
            Ablation::NoMask => "no_mask",
            Ablation::NoRoip => "no_roip",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Everything needed to rebuild the parameter layout of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub n_labels: usize,
    pub bvae: BvaeConfig,
    pub head: HeadConfig,
    pub ablations: BTreeSet<Ablation>,
}

impl ModelSpec {
    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Width of the code handed to the classification head.
    pub fn code_dim(&self) -> usize {
        if self.has(Ablation::NoBvae) {
            3 * self.bvae.latent_dim
        } else {
            self.bvae.latent_dim
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Bvae(Bvae),
    Deterministic([Mlp; 3]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Attention(HeadParams),
    Simple(Linear),
}

/// Parameter layout plus values: encoders, decoders and head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub encoder: Encoder,
    pub head: Head,
    pub store: ParamStore<T>,
}

/// Batch-mean loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossDiagnostics {
    pub loss: f64,
    /// `lrd, l, r, d`; NaN when the term is not part of the objective.
    pub elbo: [f64; 4],
    /// KL of the joint posterior.
    pub kl: f64,
    pub cls: f64,
    pub clamped: usize,
}

impl LossDiagnostics {
    pub fn accumulate(&mut self, other: &LossDiagnostics) {
        self.loss += other.loss;
        for k in 0..4 {
            self.elbo[k] += other.elbo[k];
        }
        self.kl += other.kl;
        self.cls += other.cls;
        self.clamped += other.clamped;
    }

    pub fn scale(&mut self, s: f64) {
        self.loss *= s;
        for e in &mut self.elbo {
            *e *= s;
        }
        self.kl *= s;
        self.cls *= s;
    }
}

/// Weights of the two objective components and the focal exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.bvae.validate()?;
        if spec.input_dim == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        let mut store = ParamStore::new();
        let encoder = if spec.has(Ablation::NoBvae) {
            let mut widths = vec![spec.input_dim];
            widths.extend(&spec.bvae.hidden);
            widths.push(spec.bvae.latent_dim);
            let make = |store: &mut ParamStore<T>, v: View, rng: &mut Rng| {
                Mlp::new(store, &format!("det.{}", v.name()), &widths, spec.bvae.activation, rng)
            };
            Encoder::Deterministic([
                make(&mut store, View::Left, rng)?,
                make(&mut store, View::Right, rng)?,
                make(&mut store, View::Diff, rng)?,
            ])
        } else {
            Encoder::Bvae(Bvae::new(&mut store, spec.bvae.clone(), spec.input_dim, rng)?)
        };
        let code = spec.code_dim();
        let head = if spec.has(Ablation::NoMlc) {
            if spec.n_labels < 2 {
                return Err(Error::Config(format!("need at least 2 labels, got {}", spec.n_labels)));
            }
            Head::Simple(Linear::new(&mut store, "head.simple", code, spec.n_labels, spec.head.bias, rng)?)
        } else {
            Head::Attention(HeadParams::new(&mut store, code, spec.n_labels, &spec.head, rng)?)
        };
        Ok(Self {
            spec,
            encoder,
            head,
            store,
        })
    }

    pub fn bvae(&self) -> Option<&Bvae> {
        match &self.encoder {
            Encoder::Bvae(b) => Some(b),
            Encoder::Deterministic(_) => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            store: self.store.cast(),
        }
    }

    fn head_forward(&self, tape: &mut Tape<T>, z: Var, mask: &Tensor<T>) -> Result<Var> {
        match &self.head {
            Head::Attention(h) => {
                let m = if self.spec.has(Ablation::NoMask) {
                    Tensor::zeros(mask.shape())
                } else {
                    mask.clone()
                };
                let m = tape.constant(m);
                Ok(h.forward_on_tape(tape, &self.store, z, Some(m))?.p)
            }
            Head::Simple(lin) => {
                let logits = lin.forward(tape, &self.store, z)?;
                Ok(tape.sigmoid(logits))
            }
        }
    }

    fn check_inputs(&self, batch: &ViewBatch<T>, mask: &Tensor<T>) -> Result<()> {
        if batch.width() != self.spec.input_dim {
            return Err(Error::dim("model input", &[self.spec.input_dim], &[batch.width()]));
        }
        let c = self.spec.n_labels;
        if mask.shape() != [c, c] {
            return Err(Error::dim("mask", &[c, c], mask.shape()));
        }
        Ok(())
    }

    /// Builds the training objective on `tape`:
    /// `−λ1·mean(Σ ELBO) + λ2·mean(focal loss of head(z_joint))`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        batch: &ViewBatch<T>,
        labels: &Tensor<T>,
        mask: &Tensor<T>,
        beta: f64,
        noise: &NoiseBank<T>,
        weights: LossWeights,
    ) -> Result<(Var, LossDiagnostics)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        self.check_inputs(batch, mask)?;
        if labels.shape() != [batch.len(), self.spec.n_labels] {
            return Err(Error::dim("labels", &[batch.len(), self.spec.n_labels], labels.shape()));
        }
        let inputs = batch.views.clone().map(|t| tape.constant(t));
        let mut diag = LossDiagnostics {
            elbo: [f64::NAN; 4],
            ..LossDiagnostics::default()
        };
        let (z, elbo_sum) = match &self.encoder {
            Encoder::Bvae(bvae) => {
                let subsets: &[Subset] = if self.spec.has(Ablation::NoExtraElbos) {
                    &Subset::ALL[..1]
                } else {
                    &Subset::ALL
                };
                let mut nodes: Vec<ElboNodes> = Vec::with_capacity(subsets.len());
                for &s in subsets {
                    nodes.push(bvae.elbo_on_tape(tape, &self.store, &inputs, s, beta, noise.for_subset(s))?);
                }
                let mut sum = nodes[0].elbo;
                for n in &nodes[1..] {
                    sum = tape.add(sum, n.elbo)?;
                }
                for (s, n) in subsets.iter().zip(&nodes) {
                    diag.elbo[s.index()] = crate::bvae::mean_of(tape, n.elbo);
                }
                diag.kl = crate::bvae::mean_of(tape, nodes[0].kl);
                (nodes[0].encoded.z, Some(sum))
            }
            Encoder::Deterministic(nets) => {
                let parts = View::ALL
                    .iter()
                    .map(|&v| nets[v.index()].forward(tape, &self.store, inputs[v.index()]))
                    .collect::<Result<Vec<_>>>()?;
                (tape.concat_cols(&parts)?, None)
            }
        };
        let p = self.head_forward(tape, z, mask)?;
        let head_cfg = &self.spec.head;
        let (focal, clamped) = tape.asymmetric_focal(
            p,
            labels,
            T::from_f64_lossy(head_cfg.gamma_pos),
            T::from_f64_lossy(head_cfg.gamma_neg),
            T::from_f64_lossy(PROB_CLAMP),
        )?;
        tape.ensure_finite(focal, "classification loss")?;
        diag.clamped = clamped;
        let cls = tape.mean(focal)?;
        diag.cls = tape.scalar(cls).to_f64_lossy();
        let mut loss = tape.scale(cls, T::from_f64_lossy(weights.lambda2));
        if let Some(sum) = elbo_sum {
            let mean_elbo = tape.mean(sum)?;
            let gen = tape.scale(mean_elbo, T::from_f64_lossy(-weights.lambda1));
            loss = tape.add(gen, loss)?;
        }
        tape.ensure_finite(loss, "total loss")?;
        diag.loss = tape.scalar(loss).to_f64_lossy();
        Ok((loss, diag))
    }

    /// Latent code used for prediction: the joint posterior mean, or the
    /// concatenated deterministic codes.
    pub fn code_on_tape(&self, tape: &mut Tape<T>, batch: &ViewBatch<T>) -> Result<Var> {
        let inputs = batch.views.clone().map(|t| tape.constant(t));
        match &self.encoder {
            Encoder::Bvae(bvae) => {
                let eps = Tensor::zeros(&[batch.len(), bvae.cfg.latent_dim]);
                Ok(bvae.encode_on_tape(tape, &self.store, &inputs, Subset::Joint, &eps)?.mu)
            }
            Encoder::Deterministic(nets) => {
                let parts = View::ALL
                    .iter()
                    .map(|&v| nets[v.index()].forward(tape, &self.store, inputs[v.index()]))
                    .collect::<Result<Vec<_>>>()?;
                tape.concat_cols(&parts)
            }
        }
    }

    /// Deterministic label probabilities `[B×C]`.
    pub fn infer(&self, batch: &ViewBatch<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_inputs(batch, mask)?;
        let mut tape = Tape::new();
        let z = self.code_on_tape(&mut tape, batch)?;
        let p = self.head_forward(&mut tape, z, mask)?;
        tape.ensure_finite(p, "predictions")?;
        Ok(tape.value(p).clone())
    }
}
