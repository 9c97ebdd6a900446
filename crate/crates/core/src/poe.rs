//! Product of diagonal Gaussian experts.
//!
//! A product of Gaussian densities is Gaussian: precisions add and the
//! mean is the precision-weighted average of the expert means.

use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian<T> {
    mu: Vec<T>,
    var: Vec<T>,
}

impl<T: Scalar> DiagonalGaussian<T> {
    pub fn new(mu: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mu.len() != var.len() {
            return Err(Error::dim("DiagonalGaussian", &[mu.len()], &[var.len()]));
        }
        if let Some(v) = var.iter().find(|&&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::domain("DiagonalGaussian", format!("variance {v} is not positive and finite")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("DiagonalGaussian", "non-finite mean"));
        }
        Ok(Self { mu, var })
    }

    pub fn from_logvar(mu: Vec<T>, logvar: &[T]) -> Result<Self> {
        Self::new(mu, logvar.iter().map(|lv| lv.exp()).collect())
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![T::zero(); dim],
            var: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn var(&self) -> &[T] {
        &self.var
    }

    pub fn logvar(&self) -> Vec<T> {
        self.var.iter().map(|v| v.ln()).collect()
    }
}

/// Fuses `experts` (and `prior`, if given) into their normalized product.
pub fn fuse<T: Scalar>(
    experts: &[DiagonalGaussian<T>],
    prior: Option<&DiagonalGaussian<T>>,
) -> Result<DiagonalGaussian<T>> {
    let all: Vec<&DiagonalGaussian<T>> = prior.into_iter().chain(experts).collect();
    let first = all
        .first()
        .ok_or_else(|| Error::Input("fuse needs at least one expert or a prior".into()))?;
    let d = first.dim();
    if let Some(bad) = all.iter().find(|g| g.dim() != d) {
        return Err(Error::dim("poe::fuse", &[d], &[bad.dim()]));
    }
    let mut precision = vec![T::zero(); d];
    let mut weighted = vec![T::zero(); d];
    for g in &all {
        for j in 0..d {
            let p = g.var[j].recip();
            precision[j] = precision[j] + p;
            weighted[j] = weighted[j] + g.mu[j] * p;
        }
    }
    let var: Vec<T> = precision.iter().map(|p| p.recip()).collect();
    let mu = weighted.iter().zip(&var).map(|(&w, &v)| w * v).collect();
    DiagonalGaussian::new(mu, var)
}

/// `KL(q ‖ N(0, I)) = ½ Σ (var + mu² − 1 − log var)`.
pub fn kl_to_standard_normal<T: Scalar>(q: &DiagonalGaussian<T>) -> T {
    let half = T::from_f64_lossy(0.5);
    q.mu.iter().zip(&q.var).fold(T::zero(), |acc, (&m, &v)| {
        acc + half * (v + m * m - T::one() - v.ln())
    })
}

/// Batched fusion on a tape. Each expert is a `(mu, logvar)` pair of
/// `[B×D]` nodes; the standard-normal prior contributes unit precision.
/// Returns the fused `(mu, logvar)`.
pub fn fuse_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    experts: &[(Var, Var)],
    include_prior: bool,
) -> Result<(Var, Var)> {
    let Some(&(_, lv0)) = experts.first() else {
        return Err(Error::Input("fuse_on_tape needs at least one expert".into()));
    };
    let shape = tape.value(lv0).shape().to_vec();
    let mut precision: Option<Var> = None;
    let mut weighted: Option<Var> = None;
    for &(mu, lv) in experts {
        let neg = tape.scale(lv, -T::one());
        let p = tape.exp(neg);
        let w = tape.mul(mu, p)?;
        precision = Some(match precision {
            Some(acc) => tape.add(acc, p)?,
            None => p,
        });
        weighted = Some(match weighted {
            Some(acc) => tape.add(acc, w)?,
            None => w,
        });
    }
    let mut precision = precision.expect("non-empty experts");
    if include_prior {
        precision = tape.add_scalar(precision, T::one());
    }
    let weighted = weighted.expect("non-empty experts");
    let var = tape.recip(precision)?;
    let mu = tape.mul(weighted, var)?;
    let log_prec = tape.log(precision)?;
    let logvar = tape.scale(log_prec, -T::one());
    debug_assert_eq!(tape.value(mu).shape(), shape.as_slice());
    Ok((mu, logvar))
}

/// Per-row `KL(N(mu, exp(logvar)) ‖ N(0, I))` as a `[B×1]` node.
pub fn kl_on_tape<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let var = tape.exp(logvar);
    let mu2 = tape.mul(mu, mu)?;
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -T::one());
    let s = tape.sum_rows(c)?;
    Ok(tape.scale(s, T::from_f64_lossy(0.5)))
}

/// Reads row `r` of `[B×D]` mu/logvar tensors as a [`DiagonalGaussian`].
pub fn gaussian_row<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, r: usize) -> Result<DiagonalGaussian<T>> {
    DiagonalGaussian::from_logvar(mu.row(r).to_vec(), logvar.row(r))
}
