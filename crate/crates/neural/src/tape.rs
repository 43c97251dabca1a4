//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A `Tape` records every operation of a forward pass; `backward` walks the
//! record in reverse and accumulates gradients for every node. Graphs are
//! rebuilt per forward pass, so parameters enter each pass as fresh leaves.

use crate::error::{NeuralError, Result};
use crate::tensor::{mm, mm_nt_acc, mm_tn_acc, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Gelu(Var),
    ScaledTanh(Var, f64),
    Sum(Var),
    Mean(Var),
    Rows(Var, usize, usize),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        weights: Vec<f64>, // [heads][T][T], zero above the diagonal
    },
    MeanBce {
        pred: Var,
        target: Tensor,
    },
    KlStdNormal {
        mean: Var,
        logvar: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar loss with respect to every tape node.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> &Tensor {
        &self.grads[var.0]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(NeuralError::Shape(format!(
                "operand shapes differ: {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2();
        let (kb, n) = self.value(b).dims2();
        if ka != kb {
            return Err(NeuralError::Shape(format!(
                "matmul inner dims differ: {ka} vs {kb}"
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        mm(
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
            out.data_mut(),
        );
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if self.value(bias).len() != n {
            return Err(NeuralError::Shape(format!(
                "bias length {} does not match row width {n}",
                self.value(bias).len()
            )));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..m {
            let row = &mut out.data_mut()[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += b[j];
            }
        }
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data().to_vec();
        for (o, x) in out.data_mut().iter_mut().zip(bd) {
            *o += x;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data().to_vec();
        for (o, x) in out.data_mut().iter_mut().zip(bd) {
            *o -= x;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data().to_vec();
        for (o, x) in out.data_mut().iter_mut().zip(bd) {
            *o *= x;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o += c;
        }
        self.push(out, Op::AddConst(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = f(*o);
        }
        self.push(out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    /// `cap * tanh(x / cap)`: a smooth clamp onto (-cap, cap).
    pub fn scaled_tanh(&mut self, a: Var, cap: f64) -> Var {
        self.unary(a, |x| cap * (x / cap).tanh(), Op::ScaledTanh(a, cap))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let len = self.value(a).len().max(1);
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total / len as f64), Op::Mean(a))
    }

    /// Row slice [start, end) of a matrix.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if start >= end || end > m {
            return Err(NeuralError::Shape(format!(
                "row range {start}..{end} invalid for {m} rows"
            )));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let out = Tensor::from_vec(&[end - start, n], data)?;
        Ok(self.push(out, Op::Rows(a, start, end)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let mut out = self.value(a).clone();
        for i in 0..m {
            let row = &mut out.data_mut()[i * n..(i + 1) * n];
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(NeuralError::Shape(
                "layer norm gain/bias must match row width".into(),
            ));
        }
        let mut out = self.value(x).clone();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut means = Vec::with_capacity(m);
        let mut inv_stds = Vec::with_capacity(m);
        for i in 0..m {
            let row = &mut out.data_mut()[i * n..(i + 1) * n];
            let mean: f64 = row.iter().sum::<f64>() / n as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..n {
                row[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
            means.push(mean);
            inv_stds.push(inv_std);
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                inv_std: inv_stds,
            },
        ))
    }

    /// Multi-head scaled dot-product attention with a strict causal mask:
    /// output position t attends to positions 0..=t only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (t, d) = self.value(q).dims2();
        for other in [k, v] {
            if self.value(other).dims2() != (t, d) {
                return Err(NeuralError::Shape(
                    "attention q/k/v shapes must match".into(),
                ));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(NeuralError::Shape(format!(
                "width {d} not divisible into {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();

        let mut out = Tensor::zeros(&[t, d]);
        let mut weights = vec![0.0; heads * t * t];
        for h in 0..heads {
            let off = h * dh;
            let wbase = h * t * t;
            for i in 0..t {
                let wrow = &mut weights[wbase + i * t..wbase + i * t + t];
                for j in 0..=i {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += qd[i * d + off + c] * kd[j * d + off + c];
                    }
                    wrow[j] = dot * scale;
                }
                softmax_in_place(&mut wrow[..=i]);
            }
            for i in 0..t {
                for j in 0..=i {
                    let w = weights[wbase + i * t + j];
                    let orow = &mut out.data_mut()[i * d + off..i * d + off + dh];
                    for c in 0..dh {
                        orow[c] += w * vd[j * d + off + c];
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                weights,
            },
        ))
    }

    /// Mean binary cross-entropy against a fixed target, with probability
    /// clamping for numerical safety.
    pub fn mean_bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(NeuralError::Shape(format!(
                "bce target shape {:?} does not match prediction {:?}",
                target.shape(),
                self.value(pred).shape()
            )));
        }
        let mut total = 0.0;
        for (&p, &t) in self.value(pred).data().iter().zip(target.data()) {
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let n = target.len().max(1) as f64;
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::MeanBce {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Sum over all entries of KL(N(mean, exp(logvar)) || N(0, 1)).
    pub fn kl_std_normal(&mut self, mean: Var, logvar: Var) -> Result<Var> {
        self.same_shape(mean, logvar)?;
        let mut total = 0.0;
        for (&mu, &lv) in self
            .value(mean)
            .data()
            .iter()
            .zip(self.value(logvar).data())
        {
            total += 0.5 * (mu * mu + lv.exp() - lv - 1.0);
        }
        Ok(self.push(Tensor::scalar(total), Op::KlStdNormal { mean, logvar }))
    }

    /// Backpropagate from a scalar loss; returns gradients for every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NeuralError::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if grads[idx].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let (_, n) = self.value(*b).dims2();
                    let g = grads[idx].data().to_vec();
                    // dA[m,k] += dC[m,n] * B[k,n]^T
                    mm_nt_acc(&g, self.value(*b).data(), m, n, k, grads[a.0].data_mut());
                    // dB[k,n] += A[m,k]^T * dC[m,n]
                    mm_tn_acc(self.value(*a).data(), &g, k, m, n, grads[b.0].data_mut());
                }
                Op::AddRowBias(a, bias) => {
                    let (m, n) = self.value(*a).dims2();
                    let g = grads[idx].data().to_vec();
                    for (o, x) in grads[a.0].data_mut().iter_mut().zip(&g) {
                        *o += x;
                    }
                    let gb = grads[bias.0].data_mut();
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    let g = grads[idx].data().to_vec();
                    for (o, x) in grads[a.0].data_mut().iter_mut().zip(&g) {
                        *o += x;
                    }
                    for (o, x) in grads[b.0].data_mut().iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::Sub(a, b) => {
                    let g = grads[idx].data().to_vec();
                    for (o, x) in grads[a.0].data_mut().iter_mut().zip(&g) {
                        *o += x;
                    }
                    for (o, x) in grads[b.0].data_mut().iter_mut().zip(&g) {
                        *o -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let g = grads[idx].data().to_vec();
                    let ad = self.value(*a).data().to_vec();
                    let bd = self.value(*b).data().to_vec();
                    for ((o, x), y) in grads[a.0].data_mut().iter_mut().zip(&g).zip(&bd) {
                        *o += x * y;
                    }
                    for ((o, x), y) in grads[b.0].data_mut().iter_mut().zip(&g).zip(&ad) {
                        *o += x * y;
                    }
                }
                Op::Scale(a, c) => {
                    let g = grads[idx].data().to_vec();
                    for (o, x) in grads[a.0].data_mut().iter_mut().zip(&g) {
                        *o += c * x;
                    }
                }
                Op::AddConst(a) => {
                    let g = grads[idx].data().to_vec();
                    for (o, x) in grads[a.0].data_mut().iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::Sigmoid(a) => {
                    let g = grads[idx].data().to_vec();
                    let y = node.value.data();
                    for ((o, x), &yv) in grads[a.0].data_mut().iter_mut().zip(&g).zip(y) {
                        *o += x * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let g = grads[idx].data().to_vec();
                    let y = node.value.data();
                    for ((o, x), &yv) in grads[a.0].data_mut().iter_mut().zip(&g).zip(y) {
                        *o += x * (1.0 - yv * yv);
                    }
                }
                Op::Exp(a) => {
                    let g = grads[idx].data().to_vec();
                    let y = node.value.data();
                    for ((o, x), &yv) in grads[a.0].data_mut().iter_mut().zip(&g).zip(y) {
                        *o += x * yv;
                    }
                }
                Op::Gelu(a) => {
                    let g = grads[idx].data().to_vec();
                    let xs = self.value(*a).data().to_vec();
                    for ((o, gx), &x) in grads[a.0].data_mut().iter_mut().zip(&g).zip(&xs) {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let th = u.tanh();
                        let d = 0.5 * (1.0 + th)
                            + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *o += gx * d;
                    }
                }
                Op::ScaledTanh(a, cap) => {
                    let g = grads[idx].data().to_vec();
                    let y = node.value.data();
                    for ((o, x), &yv) in grads[a.0].data_mut().iter_mut().zip(&g).zip(y) {
                        let r = yv / cap;
                        *o += x * (1.0 - r * r);
                    }
                }
                Op::Sum(a) => {
                    let g = grads[idx].item();
                    for o in grads[a.0].data_mut() {
                        *o += g;
                    }
                }
                Op::Mean(a) => {
                    let g = grads[idx].item() / self.value(*a).len().max(1) as f64;
                    for o in grads[a.0].data_mut() {
                        *o += g;
                    }
                }
                Op::Rows(a, start, _end) => {
                    let (_, n) = self.value(*a).dims2();
                    let g = grads[idx].data().to_vec();
                    let target = &mut grads[a.0].data_mut()[start * n..start * n + g.len()];
                    for (o, x) in target.iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = node.value.dims2();
                    let g = grads[idx].data().to_vec();
                    let y = node.value.data().to_vec();
                    let ga = grads[a.0].data_mut();
                    for i in 0..m {
                        let dot: f64 = (0..n).map(|j| g[i * n + j] * y[i * n + j]).sum();
                        for j in 0..n {
                            ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    mean,
                    inv_std,
                } => {
                    let (m, n) = self.value(*x).dims2();
                    let g = grads[idx].data().to_vec();
                    let xd = self.value(*x).data().to_vec();
                    let gd = self.value(*gain).data().to_vec();
                    {
                        let ggain = grads[gain.0].data_mut();
                        for i in 0..m {
                            for j in 0..n {
                                let xhat = (xd[i * n + j] - mean[i]) * inv_std[i];
                                ggain[j] += g[i * n + j] * xhat;
                            }
                        }
                    }
                    {
                        let gbias = grads[bias.0].data_mut();
                        for i in 0..m {
                            for j in 0..n {
                                gbias[j] += g[i * n + j];
                            }
                        }
                    }
                    let gx = grads[x.0].data_mut();
                    for i in 0..m {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (xd[i * n + j] - mean[i]) * inv_std[i];
                            let dxhat = g[i * n + j] * gd[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        for j in 0..n {
                            let xhat = (xd[i * n + j] - mean[i]) * inv_std[i];
                            let dxhat = g[i * n + j] * gd[j];
                            gx[i * n + j] +=
                                inv_std[i] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                Op::CausalAttention {
                    q,
                    k,
                    v,
                    heads,
                    weights,
                } => {
                    let (t, d) = self.value(*q).dims2();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let g = grads[idx].data().to_vec();
                    let qd = self.value(*q).data().to_vec();
                    let kd = self.value(*k).data().to_vec();
                    let vd = self.value(*v).data().to_vec();

                    let mut dq = vec![0.0; t * d];
                    let mut dk = vec![0.0; t * d];
                    let mut dv = vec![0.0; t * d];
                    let mut dw = vec![0.0; t * t];
                    let mut ds = vec![0.0; t * t];
                    for h in 0..*heads {
                        let off = h * dh;
                        let wbase = h * t * t;
                        // dV and dW.
                        dw.fill(0.0);
                        for i in 0..t {
                            for j in 0..=i {
                                let w = weights[wbase + i * t + j];
                                let mut dot = 0.0;
                                for c in 0..dh {
                                    let go = g[i * d + off + c];
                                    dv[j * d + off + c] += w * go;
                                    dot += go * vd[j * d + off + c];
                                }
                                dw[i * t + j] = dot;
                            }
                        }
                        // Softmax backward per row, masked region only.
                        for i in 0..t {
                            let mut dot = 0.0;
                            for j in 0..=i {
                                dot += dw[i * t + j] * weights[wbase + i * t + j];
                            }
                            for j in 0..=i {
                                let w = weights[wbase + i * t + j];
                                ds[i * t + j] = w * (dw[i * t + j] - dot);
                            }
                        }
                        // dQ and dK through the scaled dot products.
                        for i in 0..t {
                            for j in 0..=i {
                                let s = ds[i * t + j] * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[i * d + off + c] += s * kd[j * d + off + c];
                                    dk[j * d + off + c] += s * qd[i * d + off + c];
                                }
                            }
                        }
                    }
                    for (o, x) in grads[q.0].data_mut().iter_mut().zip(&dq) {
                        *o += x;
                    }
                    for (o, x) in grads[k.0].data_mut().iter_mut().zip(&dk) {
                        *o += x;
                    }
                    for (o, x) in grads[v.0].data_mut().iter_mut().zip(&dv) {
                        *o += x;
                    }
                }
                Op::MeanBce { pred, target } => {
                    let g = grads[idx].item() / target.len().max(1) as f64;
                    let pd = self.value(*pred).data().to_vec();
                    let gp = grads[pred.0].data_mut();
                    for (i, (&p, &t)) in pd.iter().zip(target.data()).enumerate() {
                        if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                            gp[i] += g * (p - t) / (p * (1.0 - p));
                        }
                    }
                }
                Op::KlStdNormal { mean, logvar } => {
                    let g = grads[idx].item();
                    let mu = self.value(*mean).data().to_vec();
                    let lv = self.value(*logvar).data().to_vec();
                    for (o, &m) in grads[mean.0].data_mut().iter_mut().zip(&mu) {
                        *o += g * m;
                    }
                    for (o, &l) in grads[logvar.0].data_mut().iter_mut().zip(&lv) {
                        *o += g * 0.5 * (l.exp() - 1.0);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
