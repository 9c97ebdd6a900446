use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::anneal::{beta, AnnealState};
use super::model::{Ablation, LossDiagnostics, LossWeights, ModelParams, ModelSpec};
use crate::bvae::{NoiseBank, ViewBatch};
use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tape, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub anneal_ratio: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Vec<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            batch_size: 100,
            anneal_ratio: 100.0,
            learning_rate: 1e-4,
            weight_decay: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.9999,
            adam_eps: 1e-8,
            epochs: 200,
            seed: 0,
            ablation: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("anneal_ratio", self.anneal_ratio),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("train.{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("train.{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

/// Training rows with binary labels as scalars.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub views: ViewBatch<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> TrainData<T> {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Copies the given rows, in order.
    pub fn gather(&self, rows: &[usize]) -> Result<(ViewBatch<T>, Tensor<T>)> {
        let pick = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let c = t.cols();
            let mut out = Vec::with_capacity(rows.len() * c);
            for &r in rows {
                out.extend_from_slice(t.row(r));
            }
            Tensor::matrix(rows.len(), c, out)
        };
        let [l, r, d] = &self.views.views;
        Ok((ViewBatch::new(pick(l)?, pick(r)?, pick(d)?)?, pick(&self.labels)?))
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub beta_last: f64,
    pub diag: LossDiagnostics,
}

impl EpochLog {
    /// `key=value` pairs separated by spaces; terms a variant does not
    /// compute print as `na`.
    pub fn to_line(&self) -> String {
        let d = &self.diag;
        let f = |v: f64| if v.is_nan() { "na".to_string() } else { format!("{v:.6e}") };
        format!(
            "epoch={} beta={} loss={} elbo_lrd={} elbo_l={} elbo_r={} elbo_d={} kl={} cls={} clamped={}",
            self.epoch,
            f(self.beta_last),
            f(d.loss),
            f(d.elbo[0]),
            f(d.elbo[1]),
            f(d.elbo[2]),
            f(d.elbo[3]),
            f(d.kl),
            f(d.cls),
            d.clamped
        )
    }
}

/// Training that stopped on a numeric failure.
#[derive(Debug)]
pub struct TrainFailure<T> {
    pub error: Error,
    /// Parameters at the end of the last completed epoch.
    pub last_good: ModelParams<T>,
    pub history: Vec<EpochLog>,
}

/// Fixed per-purpose random streams derived from one root seed.
pub struct SeedStreams {
    pub init: Rng,
    pub order: Rng,
    pub noise: Rng,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let root = Rng::new(seed);
        Self {
            init: root.fork("init"),
            order: root.fork("order"),
            noise: root.fork("noise"),
        }
    }
}

/// Fresh parameters drawn from the seed's initialization stream.
pub fn init_model<T: Scalar>(spec: ModelSpec, cfg: &TrainConfig) -> Result<ModelParams<T>> {
    cfg.validate()?;
    ModelParams::new(spec, &mut SeedStreams::new(cfg.seed).init)
}

/// Mini-batch Adam training from `params`. Deterministic given the seed,
/// config and data.
pub fn train<T: Scalar>(
    mut params: ModelParams<T>,
    cfg: &TrainConfig,
    data: &TrainData<T>,
    mask: &Tensor<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> std::result::Result<(ModelParams<T>, Vec<EpochLog>), Box<TrainFailure<T>>> {
    let mut streams = SeedStreams::new(cfg.seed);
    let mut adam = Adam::new(cfg.adam(), &params.store);
    let mut history = Vec::with_capacity(cfg.epochs);
    if let Err(error) = cfg.validate() {
        return Err(Box::new(TrainFailure { error, last_good: params, history }));
    }
    let mut last_good = params.clone();
    let n = data.len();
    let latent = params.spec.bvae.latent_dim;
    let fresh = params.spec.bvae.fresh_noise_per_elbo;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        streams.order.shuffle(&mut order);
        let mut sum = LossDiagnostics::default();
        let mut beta_last = 0.0;
        let n_batches = n.div_ceil(cfg.batch_size);
        for (j, rows) in order.chunks(cfg.batch_size).enumerate() {
            let b = beta(&AnnealState {
                epoch,
                batch: j,
                batch_size: cfg.batch_size,
                anneal_ratio: cfg.anneal_ratio,
            });
            beta_last = b;
            let step = (|| -> Result<LossDiagnostics> {
                let (views, labels) = data.gather(rows)?;
                let noise = NoiseBank::draw(&mut streams.noise, rows.len(), latent, fresh);
                let mut tape = Tape::new();
                let (loss, diag) = params.loss_on_tape(&mut tape, &views, &labels, mask, b, &noise, cfg.weights())?;
                let grads = tape.backward(loss)?;
                params.store.zero_grad();
                tape.accumulate(&grads, &mut params.store);
                if params.store.iter().any(|p| !p.grad.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch} batch {j}")));
                }
                adam.step(&mut params.store);
                Ok(diag)
            })();
            match step {
                Ok(d) => sum.accumulate(&d),
                Err(error) => {
                    return Err(Box::new(TrainFailure {
                        error,
                        last_good,
                        history,
                    }))
                }
            }
        }
        sum.scale(1.0 / n_batches.max(1) as f64);
        let log = EpochLog {
            epoch,
            beta_last,
            diag: sum,
        };
        on_epoch(&log);
        history.push(log);
        last_good.store.clone_from(&params.store);
    }
    Ok((params, history))
}
