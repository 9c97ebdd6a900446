//! Dense numeric substrate: tensors, parameters, a gradient tape, seeded
//! randomness and a finite-difference checker.

mod gradcheck;
mod layers;
mod param;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use layers::{Linear, Mlp};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{log_sigmoid, sigmoid, softmax_in_place, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// Elementwise maps exposed as a single entry point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    LogSigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    SoftmaxRows,
}

impl<T: Scalar> Tape<T> {
    pub fn elementwise(&mut self, x: Var, kind: Elementwise) -> Result<Var> {
        Ok(match kind {
            Elementwise::Sigmoid => self.sigmoid(x),
            Elementwise::LogSigmoid => self.log_sigmoid(x),
            Elementwise::Tanh => self.tanh(x),
            Elementwise::Relu => self.relu(x),
            Elementwise::Exp => self.exp(x),
            Elementwise::Log => self.log(x)?,
            Elementwise::SoftmaxRows => self.softmax_rows(x)?,
        })
    }
}

/// Evaluates `W·x + b` for a single vector without recording gradients.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let y = tape.affine(xv, wv, Some(bv))?;
    let out = tape.value(y).clone();
    if x.shape().len() == 1 {
        let n = out.len();
        return out.reshape(&[n]);
    }
    Ok(out)
}
