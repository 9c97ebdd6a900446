use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all coordinates.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Checks every parameter coordinate of `store` against a central
/// difference of step `eps`. `loss_fn` must build a `1×1` loss on the
/// supplied tape and must be deterministic (freeze any noise outside it).
pub fn grad_check<T, F>(store: &mut ParamStore<T>, eps: f64, mut loss_fn: F) -> Result<GradCheck>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>, &mut Tape<T>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let eval = |store: &ParamStore<T>, loss_fn: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.scalar(loss).to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::Numeric("grad_check: non-finite loss".into()));
        }
        Ok(v)
    };

    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Numeric("grad_check: non-finite loss".into()));
        }
        let grads = tape.backward(loss)?;
        tape.accumulate(&grads, store);
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.to_f64_vec()).collect();

    let step = T::from_f64_lossy(eps);
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for pi in 0..store.len() {
        let id = super::ParamId(pi);
        for k in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + step;
            let up = eval(store, &mut loss_fn)?;
            store.get_mut(id).value.data_mut()[k] = orig - step;
            let down = eval(store, &mut loss_fn)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_param = store.get(id).name.clone();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
