//! Reverse-mode differentiation over whole-tensor operations.
//!
//! Every op records its output value on a linear tape; [`Tape::backward`]
//! walks the tape in reverse once and returns the adjoint of every node.

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// `x·wᵀ`, `x: [m×k]`, `w: [n×k]`.
    MatMulNT(Var, Var),
    /// `a·b`, `a: [m×k]`, `b: [k×n]`.
    MatMul(Var, Var),
    AddBias(Var, Var),
    SumRows(Var),
    Mean(Var),
    RepeatHadamard(Var, Var),
    BatchMatMulNT(Var, Var, usize),
    BatchMatMul(Var, Var, usize),
    AddTiled(Var, Var),
    RowDotTiled(Var, Var),
    ConcatCols(Vec<Var>),
    /// Pre-computed local derivative dOut/dIn per element of the input.
    AsymFocal(Var, Tensor<T>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Recording of one forward evaluation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// Non-learnable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Learnable input bound to a parameter; its adjoint is accumulated by
    /// [`Tape::accumulate`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).value.clone())
    }

    /// Fails on the first NaN or infinity, naming `what`.
    pub fn ensure_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {what}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("add", va, vb)?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("sub", va, vb)?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same("mul", va, vb)?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        let out = va.map(T::ln);
        Ok(self.push(Op::Log(a), out))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x == T::zero()) {
            return Err(Error::domain("recip", "zero input"));
        }
        let out = va.map(T::recip);
        Ok(self.push(Op::Recip(a), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// `log(sigmoid(x))` evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        self.push(Op::LogSigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(Op::Relu(a), out)
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.dims2()?;
        let mut out = va.clone();
        for i in 0..r {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            softmax_in_place(row);
        }
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    /// `x·wᵀ`: the affine-layer product for weights stored `[out×in]`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (m, k) = vx.dims2()?;
        let (n, k2) = vw.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", &[n, k], &[n, k2]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(vx.data(), (m, k), false, vw.data(), (n, k), true, T::zero(), &mut out);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMulNT(x, w), out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2()?;
        let (k2, n) = vb.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", &[k, n], &[k2, n]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(va.data(), (m, k), false, vb.data(), (k, n), false, T::zero(), &mut out);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Adds bias `b: [n]` to every row of `x: [m×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (m, n) = vx.dims2()?;
        if vb.len() != n {
            return Err(Error::dim("add_bias", &[n], vb.shape()));
        }
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] = vx.data()[i * n + j] + vb.data()[j];
            }
        }
        Ok(self.push(Op::AddBias(x, b), out))
    }

    /// `x·wᵀ + b`, optionally without bias.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Sum over columns: `[m×n] -> [m×1]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        let data = (0..m)
            .map(|i| {
                va.data()[i * n..(i + 1) * n]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v)
            })
            .collect();
        let out = Tensor::matrix(m, 1, data)?;
        Ok(self.push(Op::SumRows(a), out))
    }

    /// Mean of all elements as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::Input("mean of empty tensor".into()));
        }
        let n = T::from_usize(va.len()).expect("length fits scalar");
        let out = Tensor::scalar(va.sum() / n);
        Ok(self.push(Op::Mean(a), out))
    }

    /// Per-label copies of each latent row scaled by the label's weights:
    /// `out[b·C + c, d] = z[b, d] · w[c, d]`.
    pub fn repeat_hadamard(&mut self, z: Var, w: Var) -> Result<Var> {
        let (vz, vw) = (self.value(z), self.value(w));
        let (bsz, d) = vz.dims2()?;
        let (c, d2) = vw.dims2()?;
        if d != d2 {
            return Err(Error::dim("repeat_hadamard", &[c, d], &[c, d2]));
        }
        let mut out = vec![T::zero(); bsz * c * d];
        for b in 0..bsz {
            let zr = &vz.data()[b * d..(b + 1) * d];
            for l in 0..c {
                let wr = &vw.data()[l * d..(l + 1) * d];
                let o = &mut out[(b * c + l) * d..(b * c + l + 1) * d];
                for j in 0..d {
                    o[j] = zr[j] * wr[j];
                }
            }
        }
        let out = Tensor::matrix(bsz * c, d, out)?;
        Ok(self.push(Op::RepeatHadamard(z, w), out))
    }

    /// Block-diagonal `a_b·b_bᵀ` over `batch` stacked blocks.
    pub fn batch_matmul_nt(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ar, k) = va.dims2()?;
        let (br, k2) = vb.dims2()?;
        if batch == 0 || ar % batch != 0 || br % batch != 0 || k != k2 {
            return Err(Error::dim("batch_matmul_nt", &[ar, k], &[br, k2]));
        }
        let (r, s) = (ar / batch, br / batch);
        let mut out = vec![T::zero(); batch * r * s];
        for i in 0..batch {
            gemm_into(
                &va.data()[i * r * k..(i + 1) * r * k],
                (r, k),
                false,
                &vb.data()[i * s * k..(i + 1) * s * k],
                (s, k),
                true,
                T::zero(),
                &mut out[i * r * s..(i + 1) * r * s],
            );
        }
        let out = Tensor::matrix(batch * r, s, out)?;
        Ok(self.push(Op::BatchMatMulNT(a, b, batch), out))
    }

    /// Block-diagonal `a_b·b_b` over `batch` stacked blocks.
    pub fn batch_matmul(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ar, s) = va.dims2()?;
        let (br, n) = vb.dims2()?;
        if batch == 0 || ar % batch != 0 || br != batch * s {
            return Err(Error::dim("batch_matmul", &[batch * s, n], &[br, n]));
        }
        let r = ar / batch;
        let mut out = vec![T::zero(); batch * r * n];
        for i in 0..batch {
            gemm_into(
                &va.data()[i * r * s..(i + 1) * r * s],
                (r, s),
                false,
                &vb.data()[i * s * n..(i + 1) * s * n],
                (s, n),
                false,
                T::zero(),
                &mut out[i * r * n..(i + 1) * r * n],
            );
        }
        let out = Tensor::matrix(batch * r, n, out)?;
        Ok(self.push(Op::BatchMatMul(a, b, batch), out))
    }

    /// Adds the square matrix `m: [C×C]` to every `C×C` block of `x`.
    pub fn add_tiled(&mut self, x: Var, m: Var) -> Result<Var> {
        let (vx, vm) = (self.value(x), self.value(m));
        let (xr, c) = vx.dims2()?;
        let (mr, mc) = vm.dims2()?;
        if mr != c || mc != c || xr % c != 0 {
            return Err(Error::dim("add_tiled", &[c, c], &[mr, mc]));
        }
        let md = vm.data();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + md[i % (c * c)];
        }
        Ok(self.push(Op::AddTiled(x, m), out))
    }

    /// `out[b, c] = x[b·C + c, :] · w[c, :]`.
    pub fn row_dot_tiled(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (xr, d) = vx.dims2()?;
        let (c, d2) = vw.dims2()?;
        if d != d2 || c == 0 || xr % c != 0 {
            return Err(Error::dim("row_dot_tiled", &[c, d], &[c, d2]));
        }
        let bsz = xr / c;
        let mut out = vec![T::zero(); bsz * c];
        for (row, o) in out.iter_mut().enumerate() {
            let xrow = &vx.data()[row * d..(row + 1) * d];
            let wrow = &vw.data()[(row % c) * d..(row % c + 1) * d];
            *o = xrow
                .iter()
                .zip(wrow)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
        let out = Tensor::matrix(bsz, c, out)?;
        Ok(self.push(Op::RowDotTiled(x, w), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat_cols of nothing".into()))?;
        let m = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(Error::dim("concat_cols", &[m], &[r]));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p).data();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::matrix(m, total, out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Per-row mean asymmetric focal loss of probabilities `p: [B×C]`
    /// against binary targets `y`. Returns the `[B×1]` node and the number
    /// of probabilities that had to be clamped into `[eps, 1-eps]`.
    pub fn asymmetric_focal(
        &mut self,
        p: Var,
        y: &Tensor<T>,
        gamma_pos: T,
        gamma_neg: T,
        eps: T,
    ) -> Result<(Var, usize)> {
        let vp = self.value(p);
        check_same("asymmetric_focal", vp, y)?;
        let (b, c) = vp.dims2()?;
        let cn = T::from_usize(c).expect("label count fits scalar");
        let mut local = Tensor::zeros(vp.shape());
        let mut rows = vec![T::zero(); b];
        let mut clamped = 0;
        let one = T::one();
        for i in 0..b {
            let mut acc = T::zero();
            for j in 0..c {
                let idx = i * c + j;
                let raw = vp.data()[idx];
                let (q, inside) = if raw < eps {
                    (eps, false)
                } else if raw > one - eps {
                    (one - eps, false)
                } else {
                    (raw, true)
                };
                if !inside {
                    clamped += 1;
                }
                let (loss, dloss) = if y.data()[idx] > T::zero() {
                    let w = (one - q).powf(gamma_pos);
                    let dw = if gamma_pos == T::zero() {
                        T::zero()
                    } else {
                        -gamma_pos * (one - q).powf(gamma_pos - one)
                    };
                    (-w * q.ln(), -(dw * q.ln() + w / q))
                } else {
                    let w = q.powf(gamma_neg);
                    let dw = if gamma_neg == T::zero() {
                        T::zero()
                    } else {
                        gamma_neg * q.powf(gamma_neg - one)
                    };
                    let l1 = (one - q).ln();
                    (-w * l1, -(dw * l1 - w / (one - q)))
                };
                acc = acc + loss;
                local.data_mut()[idx] = if inside { dloss / cn } else { T::zero() };
            }
            rows[i] = acc / cn;
        }
        let out = Tensor::matrix(b, 1, rows)?;
        Ok((self.push(Op::AsymFocal(p, local), out), clamped))
    }

    /// Adjoints of every node with respect to the `1×1` node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", &[1], self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds parameter adjoints into the store's gradient buffers.
    pub fn accumulate(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).grad.add_assign(g);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut send = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, g.zip_map(vb, |x, w| x * w));
                send(*b, g.zip_map(va, |x, w| x * w));
            }
            Op::Scale(a, s) => {
                let s = *s;
                send(*a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Exp(a) => send(*a, g.zip_map(y, |x, e| x * e)),
            Op::Log(a) => send(*a, g.zip_map(self.value(*a), |x, v| x / v)),
            Op::Recip(a) => send(*a, g.zip_map(y, |x, r| -x * r * r)),
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |x, s| x * s * (T::one() - s))),
            Op::LogSigmoid(a) => {
                send(*a, g.zip_map(self.value(*a), |x, v| x * sigmoid(-v)));
            }
            Op::Tanh(a) => send(*a, g.zip_map(y, |x, t| x * (T::one() - t * t))),
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |x, v| if v > T::zero() { x } else { T::zero() }),
            ),
            Op::SoftmaxRows(a) => {
                let (r, c) = y.dims2()?;
                let mut out = Tensor::zeros(y.shape());
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |acc, (&s, &d)| acc + s * d);
                    let o = &mut out.data_mut()[i * c..(i + 1) * c];
                    for j in 0..c {
                        o[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, out);
            }
            Op::MatMulNT(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (m, k) = vx.dims2()?;
                let (n, _) = vw.dims2()?;
                let mut dx = vec![T::zero(); m * k];
                gemm_into(g.data(), (m, n), false, vw.data(), (n, k), false, T::zero(), &mut dx);
                let mut dw = vec![T::zero(); n * k];
                gemm_into(g.data(), (m, n), true, vx.data(), (m, k), false, T::zero(), &mut dw);
                send(*x, Tensor::new(vx.shape().to_vec(), dx)?);
                send(*w, Tensor::new(vw.shape().to_vec(), dw)?);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2()?;
                let (_, n) = vb.dims2()?;
                let mut da = vec![T::zero(); m * k];
                gemm_into(g.data(), (m, n), false, vb.data(), (k, n), true, T::zero(), &mut da);
                let mut db = vec![T::zero(); k * n];
                gemm_into(va.data(), (m, k), true, g.data(), (m, n), false, T::zero(), &mut db);
                send(*a, Tensor::new(va.shape().to_vec(), da)?);
                send(*b, Tensor::new(vb.shape().to_vec(), db)?);
            }
            Op::AddBias(x, b) => {
                let (m, n) = g.dims2()?;
                let mut db = vec![T::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] = db[j] + g.data()[i * n + j];
                    }
                }
                send(*x, g.clone().reshape(self.value(*x).shape())?);
                send(*b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
            }
            Op::SumRows(a) => {
                let va = self.value(*a);
                let (m, n) = va.dims2()?;
                let mut out = Tensor::zeros(va.shape());
                for i in 0..m {
                    let gi = g.data()[i];
                    out.data_mut()[i * n..(i + 1) * n].fill(gi);
                }
                send(*a, out);
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let n = T::from_usize(va.len()).expect("length fits scalar");
                send(*a, Tensor::full(va.shape(), g.data()[0] / n));
            }
            Op::RepeatHadamard(z, w) => {
                let (vz, vw) = (self.value(*z), self.value(*w));
                let (bsz, d) = vz.dims2()?;
                let (c, _) = vw.dims2()?;
                let mut dz = vec![T::zero(); bsz * d];
                let mut dw = vec![T::zero(); c * d];
                for b in 0..bsz {
                    for l in 0..c {
                        let gr = &g.data()[(b * c + l) * d..(b * c + l + 1) * d];
                        for j in 0..d {
                            dz[b * d + j] = dz[b * d + j] + gr[j] * vw.data()[l * d + j];
                            dw[l * d + j] = dw[l * d + j] + gr[j] * vz.data()[b * d + j];
                        }
                    }
                }
                send(*z, Tensor::new(vz.shape().to_vec(), dz)?);
                send(*w, Tensor::new(vw.shape().to_vec(), dw)?);
            }
            Op::BatchMatMulNT(a, b, batch) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ar, k) = va.dims2()?;
                let (br, _) = vb.dims2()?;
                let (r, s) = (ar / batch, br / batch);
                let mut da = vec![T::zero(); ar * k];
                let mut db = vec![T::zero(); br * k];
                for i in 0..*batch {
                    let gi = &g.data()[i * r * s..(i + 1) * r * s];
                    let ai = &va.data()[i * r * k..(i + 1) * r * k];
                    let bi = &vb.data()[i * s * k..(i + 1) * s * k];
                    // C = A Bᵀ: dA = G B, dB = Gᵀ A
                    gemm_into(gi, (r, s), false, bi, (s, k), false, T::zero(), &mut da[i * r * k..(i + 1) * r * k]);
                    gemm_into(gi, (r, s), true, ai, (r, k), false, T::zero(), &mut db[i * s * k..(i + 1) * s * k]);
                }
                send(*a, Tensor::new(va.shape().to_vec(), da)?);
                send(*b, Tensor::new(vb.shape().to_vec(), db)?);
            }
            Op::BatchMatMul(a, b, batch) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ar, s) = va.dims2()?;
                let (_, n) = vb.dims2()?;
                let r = ar / batch;
                let mut da = vec![T::zero(); ar * s];
                let mut db = vec![T::zero(); batch * s * n];
                for i in 0..*batch {
                    let gi = &g.data()[i * r * n..(i + 1) * r * n];
                    let ai = &va.data()[i * r * s..(i + 1) * r * s];
                    let bi = &vb.data()[i * s * n..(i + 1) * s * n];
                    // C = A B: dA = G Bᵀ, dB = Aᵀ G
                    gemm_into(gi, (r, n), false, bi, (s, n), true, T::zero(), &mut da[i * r * s..(i + 1) * r * s]);
                    gemm_into(ai, (r, s), true, gi, (r, n), false, T::zero(), &mut db[i * s * n..(i + 1) * s * n]);
                }
                send(*a, Tensor::new(va.shape().to_vec(), da)?);
                send(*b, Tensor::new(vb.shape().to_vec(), db)?);
            }
            Op::AddTiled(x, m) => {
                let vm = self.value(*m);
                let cc = vm.len();
                let mut dm = vec![T::zero(); cc];
                for (i, &gv) in g.data().iter().enumerate() {
                    dm[i % cc] = dm[i % cc] + gv;
                }
                send(*x, g.clone());
                send(*m, Tensor::new(vm.shape().to_vec(), dm)?);
            }
            Op::RowDotTiled(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (xr, d) = vx.dims2()?;
                let (c, _) = vw.dims2()?;
                let mut dx = vec![T::zero(); xr * d];
                let mut dw = vec![T::zero(); c * d];
                for row in 0..xr {
                    let gv = g.data()[row];
                    let l = row % c;
                    for j in 0..d {
                        dx[row * d + j] = gv * vw.data()[l * d + j];
                        dw[l * d + j] = dw[l * d + j] + gv * vx.data()[row * d + j];
                    }
                }
                send(*x, Tensor::new(vx.shape().to_vec(), dx)?);
                send(*w, Tensor::new(vw.shape().to_vec(), dw)?);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let w = vp.cols();
                    let mut out = vec![T::zero(); m * w];
                    for i in 0..m {
                        out[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    off += w;
                    send(p, Tensor::new(vp.shape().to_vec(), out)?);
                }
            }
            Op::AsymFocal(p, local) => {
                let (b, c) = local.dims2()?;
                let mut out = local.clone();
                for i in 0..b {
                    let gi = g.data()[i];
                    for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                        *v = *v * gi;
                    }
                }
                send(*p, out);
            }
        }
        Ok(())
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    // log σ(x) = min(x, 0) - log1p(exp(-|x|))
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
