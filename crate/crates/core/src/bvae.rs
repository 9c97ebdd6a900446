//! Three-view variational autoencoder with a product-of-experts encoder.
//!
//! Each view (left hemisphere, right hemisphere, their difference) has its
//! own encoder producing a diagonal Gaussian expert and its own decoder.
//! The joint posterior is the product of the standard-normal prior with the
//! experts of whichever views are present. Four ELBOs are formed: one from
//! the joint posterior and one from each single-view posterior; every ELBO
//! reconstructs all three views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Activation, Linear, Mlp, ParamStore, Rng, Tape, Tensor, Var};
use crate::poe::{self, DiagonalGaussian};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
    Diff,
}

impl View {
    pub const ALL: [View; 3] = [View::Left, View::Right, View::Diff];

    pub fn index(self) -> usize {
        match self {
            View::Left => 0,
            View::Right => 1,
            View::Diff => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Left => "l",
            View::Right => "r",
            View::Diff => "d",
        }
    }
}

/// Which views feed the encoder for one ELBO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subset {
    Joint,
    Only(View),
}

impl Subset {
    /// Fixed evaluation order of the four ELBOs.
    pub const ALL: [Subset; 4] = [
        Subset::Joint,
        Subset::Only(View::Left),
        Subset::Only(View::Right),
        Subset::Only(View::Diff),
    ];

    pub fn views(self) -> &'static [View] {
        match self {
            Subset::Joint => &View::ALL,
            Subset::Only(View::Left) => &[View::Left],
            Subset::Only(View::Right) => &[View::Right],
            Subset::Only(View::Diff) => &[View::Diff],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Subset::Joint => 0,
            Subset::Only(v) => 1 + v.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Joint => "lrd",
            Subset::Only(v) => v.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BvaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda_l: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    /// Draw separate reparameterization noise for each of the four ELBOs.
    pub fresh_noise_per_elbo: bool,
}

impl Default for BvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: vec![512],
            activation: Activation::Tanh,
            lambda_l: 1.0,
            lambda_r: 1.0,
            lambda_d: 1.0,
            fresh_noise_per_elbo: true,
        }
    }
}

impl BvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("bvae.latent_dim must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("bvae.hidden widths must be positive".into()));
        }
        for (name, l) in [("lambda_l", self.lambda_l), ("lambda_r", self.lambda_r), ("lambda_d", self.lambda_d)] {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("bvae.{name} must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda(&self, v: View) -> f64 {
        match v {
            View::Left => self.lambda_l,
            View::Right => self.lambda_r,
            View::Diff => self.lambda_d,
        }
    }
}

/// Encoder and decoder of a single view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewNet {
    pub trunk: Mlp,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub decoder: Mlp,
}

impl ViewNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        cfg: &BvaeConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut enc_widths = vec![input_dim];
        enc_widths.extend(&cfg.hidden);
        let trunk = Mlp::new(store, &format!("{name}.enc"), &enc_widths, cfg.activation, rng)?;
        let feat = *enc_widths.last().expect("non-empty");
        let mu_head = Linear::new(store, &format!("{name}.enc_mu"), feat, cfg.latent_dim, true, rng)?;
        let logvar_head = Linear::new(store, &format!("{name}.enc_logvar"), feat, cfg.latent_dim, true, rng)?;
        let mut dec_widths = vec![cfg.latent_dim];
        dec_widths.extend(cfg.hidden.iter().rev());
        dec_widths.push(input_dim);
        let decoder = Mlp::new(store, &format!("{name}.dec"), &dec_widths, cfg.activation, rng)?;
        Ok(Self {
            trunk,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    /// `(mu, logvar)` of this view's expert.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward_hidden(tape, store, x)?;
        let mu = self.mu_head.forward(tape, store, h)?;
        let lv = self.logvar_head.forward(tape, store, h)?;
        Ok((mu, lv))
    }

    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        self.decoder.forward(tape, store, z)
    }
}

/// The three view networks plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Bvae {
    pub cfg: BvaeConfig,
    pub input_dim: usize,
    pub nets: [ViewNet; 3],
}

/// Batch of the three views, each `[B×W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch<T> {
    pub views: [Tensor<T>; 3],
}

impl<T: Scalar> ViewBatch<T> {
    pub fn new(left: Tensor<T>, right: Tensor<T>, diff: Tensor<T>) -> Result<Self> {
        if left.shape() != right.shape() || left.shape() != diff.shape() {
            return Err(Error::dim("ViewBatch", left.shape(), right.shape()));
        }
        left.dims2()?;
        Ok(Self {
            views: [left, right, diff],
        })
    }

    /// Builds the difference view from the two hemispheres.
    pub fn from_hemispheres(left: Tensor<T>, right: Tensor<T>) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::dim("ViewBatch", left.shape(), right.shape()));
        }
        let diff = left.zip_map(&right, |a, b| a - b);
        Self::new(left, right, diff)
    }

    pub fn len(&self) -> usize {
        self.views[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.views[0].cols()
    }

    pub fn view(&self, v: View) -> &Tensor<T> {
        &self.views[v.index()]
    }
}

/// Reparameterization noise for the four ELBOs, drawn before the forward
/// pass so the loss is a deterministic function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBank<T> {
    eps: [Tensor<T>; 4],
}

impl<T: Scalar> NoiseBank<T> {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        let z = Tensor::zeros(&[batch, dim]);
        Self {
            eps: [z.clone(), z.clone(), z.clone(), z],
        }
    }

    /// Standard-normal draws; with `fresh == false` one draw is shared by
    /// all four ELBOs.
    pub fn draw(rng: &mut Rng, batch: usize, dim: usize, fresh: bool) -> Self {
        if fresh {
            Self {
                eps: std::array::from_fn(|_| rng.normal_tensor(&[batch, dim])),
            }
        } else {
            let e = rng.normal_tensor(&[batch, dim]);
            Self {
                eps: [e.clone(), e.clone(), e.clone(), e],
            }
        }
    }

    pub fn for_subset(&self, s: Subset) -> &Tensor<T> {
        &self.eps[s.index()]
    }
}

/// Tape handles of one encoding.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Tape handles of one ELBO, every entry `[B×1]`.
#[derive(Clone, Copy, Debug)]
pub struct ElboNodes {
    pub elbo: Var,
    pub loglik: [Var; 3],
    pub kl: Var,
    pub encoded: Encoded,
}

/// Batch-mean values of one ELBO.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboDiagnostics {
    pub elbo: f64,
    pub loglik: [f64; 3],
    pub kl: f64,
}

impl Bvae {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: BvaeConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("view width must be positive".into()));
        }
        let nets = [
            ViewNet::new(store, "bvae.l", input_dim, &cfg, rng)?,
            ViewNet::new(store, "bvae.r", input_dim, &cfg, rng)?,
            ViewNet::new(store, "bvae.d", input_dim, &cfg, rng)?,
        ];
        Ok(Self { cfg, input_dim, nets })
    }

    pub fn net(&self, v: View) -> &ViewNet {
        &self.nets[v.index()]
    }

    /// Fuses the prior with the experts of `subset` and draws
    /// `z = mu + exp(logvar / 2) ⊙ eps`.
    pub fn encode_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: &[Var; 3],
        subset: Subset,
        eps: &Tensor<T>,
    ) -> Result<Encoded> {
        let experts = subset
            .views()
            .iter()
            .map(|&v| self.net(v).encode(tape, store, inputs[v.index()]))
            .collect::<Result<Vec<_>>>()?;
        let (mu, logvar) = poe::fuse_on_tape(tape, &experts, true)?;
        if tape.value(mu).shape() != eps.shape() {
            return Err(Error::dim("encode noise", tape.value(mu).shape(), eps.shape()));
        }
        let half = tape.scale(logvar, T::from_f64_lossy(0.5));
        let sd = tape.exp(half);
        let e = tape.constant(eps.clone());
        let spread = tape.mul(sd, e)?;
        let z = tape.add(mu, spread)?;
        Ok(Encoded { mu, logvar, z })
    }

    /// Unit-variance Gaussian log-likelihood per row, constant included.
    pub fn loglik_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, recon: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        let diff = tape.sub(x, recon)?;
        let sq = tape.mul(diff, diff)?;
        let ss = tape.sum_rows(sq)?;
        let neg = tape.scale(ss, T::from_f64_lossy(-0.5));
        Ok(tape.add_scalar(neg, T::from_f64_lossy(gaussian_log_constant(width))))
    }

    pub fn elbo_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: &[Var; 3],
        subset: Subset,
        beta: f64,
        eps: &Tensor<T>,
    ) -> Result<ElboNodes> {
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
        }
        let encoded = self.encode_on_tape(tape, store, inputs, subset, eps)?;
        let mut loglik = [encoded.z; 3];
        let mut total: Option<Var> = None;
        for v in View::ALL {
            let recon = self.net(v).decode(tape, store, encoded.z)?;
            let ll = Self::loglik_on_tape(tape, inputs[v.index()], recon)?;
            tape.ensure_finite(ll, &format!("elbo_{} reconstruction of view {}", subset.name(), v.name()))?;
            loglik[v.index()] = ll;
            let weighted = tape.scale(ll, T::from_f64_lossy(self.cfg.lambda(v)));
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        let kl = poe::kl_on_tape(tape, encoded.mu, encoded.logvar)?;
        tape.ensure_finite(kl, &format!("elbo_{} kl", subset.name()))?;
        let penalty = tape.scale(kl, T::from_f64_lossy(beta));
        let elbo = tape.sub(total.expect("three views"), penalty)?;
        Ok(ElboNodes {
            elbo,
            loglik,
            kl,
            encoded,
        })
    }

    /// Encodes a batch; returns the fused Gaussian of each row and the
    /// reparameterized samples `[B×D]`.
    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        batch: &ViewBatch<T>,
        subset: Subset,
        eps: &Tensor<T>,
    ) -> Result<(Vec<DiagonalGaussian<T>>, Tensor<T>)> {
        let mut tape = Tape::new();
        let inputs = batch.views.clone().map(|t| tape.constant(t));
        let enc = self.encode_on_tape(&mut tape, store, &inputs, subset, eps)?;
        let fused = (0..batch.len())
            .map(|r| poe::gaussian_row(tape.value(enc.mu), tape.value(enc.logvar), r))
            .collect::<Result<Vec<_>>>()?;
        Ok((fused, tape.value(enc.z).clone()))
    }

    /// Batch-mean ELBO for one encoding subset.
    pub fn elbo<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        batch: &ViewBatch<T>,
        subset: Subset,
        beta: f64,
        noise: &NoiseBank<T>,
    ) -> Result<ElboDiagnostics> {
        let mut tape = Tape::new();
        let inputs = batch.views.clone().map(|t| tape.constant(t));
        let nodes = self.elbo_on_tape(&mut tape, store, &inputs, subset, beta, noise.for_subset(subset))?;
        Ok(elbo_diagnostics(&tape, &nodes))
    }

    /// Sum of the four ELBOs (batch mean).
    pub fn total_elbo<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        batch: &ViewBatch<T>,
        beta: f64,
        noise: &NoiseBank<T>,
    ) -> Result<f64> {
        Subset::ALL
            .iter()
            .map(|&s| self.elbo(store, batch, s, beta, noise).map(|d| d.elbo))
            .sum()
    }
}

/// `−(width/2)·log(2π)`.
pub fn gaussian_log_constant(width: usize) -> f64 {
    -0.5 * width as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub(crate) fn mean_of<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    let t = tape.value(v);
    t.to_f64_vec().iter().sum::<f64>() / t.len().max(1) as f64
}

pub fn elbo_diagnostics<T: Scalar>(tape: &Tape<T>, nodes: &ElboNodes) -> ElboDiagnostics {
    ElboDiagnostics {
        elbo: mean_of(tape, nodes.elbo),
        loglik: nodes.loglik.map(|v| mean_of(tape, v)),
        kl: mean_of(tape, nodes.kl),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(hidden: Vec<usize>) -> (ParamStore<f64>, Bvae) {
        let mut store = ParamStore::new();
        let cfg = BvaeConfig {
            latent_dim: 2,
            hidden,
            ..BvaeConfig::default()
        };
        let model = Bvae::new(&mut store, cfg, 3, &mut Rng::new(5)).unwrap();
        (store, model)
    }

    fn batch(rows: usize, seed: u64) -> ViewBatch<f64> {
        let mut rng = Rng::new(seed);
        ViewBatch::from_hemispheres(rng.normal_tensor(&[rows, 3]), rng.normal_tensor(&[rows, 3])).unwrap()
    }

    #[test]
    fn zero_weights_give_quarter_variance_joint_posterior() {
        let (mut store, model) = tiny(vec![4]);
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let b = batch(2, 1);
        let (fused, z) = model.encode(&store, &b, Subset::Joint, &Tensor::zeros(&[2, 2])).unwrap();
        for g in &fused {
            assert_eq!(g.mu(), &[0.0, 0.0]);
            assert_eq!(g.var(), &[0.25, 0.25]);
        }
        assert_eq!(z.data(), &[0.0; 4]);
    }

    #[test]
    fn single_view_subset_uses_only_that_expert() {
        let (store, model) = tiny(vec![4]);
        let b = batch(1, 2);
        let (fused, _) = model.encode(&store, &b, Subset::Only(View::Left), &Tensor::zeros(&[1, 2])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(b.view(View::Left).clone());
        let (mu, lv) = model.net(View::Left).encode(&mut tape, &store, x).unwrap();
        let expert = poe::gaussian_row(tape.value(mu), tape.value(lv), 0).unwrap();
        let direct = poe::fuse(&[expert], Some(&DiagonalGaussian::standard(2))).unwrap();
        for j in 0..2 {
            assert!((fused[0].mu()[j] - direct.mu()[j]).abs() < 1e-14);
            assert!((fused[0].var()[j] - direct.var()[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_sample_is_the_mean() {
        let (store, model) = tiny(vec![]);
        let b = batch(3, 3);
        let (fused, z) = model.encode(&store, &b, Subset::Joint, &Tensor::zeros(&[3, 2])).unwrap();
        for (r, g) in fused.iter().enumerate() {
            assert_eq!(z.row(r), g.mu());
        }
    }

    #[test]
    fn kl_only_elbo_is_non_positive() {
        let (mut store, mut model) = tiny(vec![4]);
        model.cfg.lambda_l = 0.0;
        model.cfg.lambda_r = 0.0;
        model.cfg.lambda_d = 0.0;
        let b = batch(4, 4);
        let noise = NoiseBank::draw(&mut Rng::new(1), 4, 2, true);
        for s in Subset::ALL {
            let d = model.elbo(&store, &b, s, 1.0, &noise).unwrap();
            assert!(d.elbo <= 0.0);
            assert!((d.elbo + d.kl).abs() < 1e-12);
        }
        store.zero_grad();
    }

    #[test]
    fn joint_posterior_is_tighter_than_single_views() {
        let (store, model) = tiny(vec![4]);
        let b = batch(5, 6);
        let zeros = Tensor::zeros(&[5, 2]);
        let (joint, _) = model.encode(&store, &b, Subset::Joint, &zeros).unwrap();
        for v in View::ALL {
            let (single, _) = model.encode(&store, &b, Subset::Only(v), &zeros).unwrap();
            for (j, s) in joint.iter().zip(&single) {
                for d in 0..2 {
                    assert!(j.var()[d] <= s.var()[d]);
                }
            }
        }
    }

    #[test]
    fn negative_beta_is_rejected() {
        let (store, model) = tiny(vec![]);
        let b = batch(1, 7);
        let noise = NoiseBank::zeros(1, 2);
        assert!(matches!(
            model.elbo(&store, &b, Subset::Joint, -0.1, &noise),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_constant() {
        assert!((gaussian_log_constant(2) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }
}
