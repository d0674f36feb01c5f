//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as it executes. Nodes are appended in
//! execution order, so walking the tape backwards from the loss visits each
//! node once, after all of its consumers.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamGrads, ParamId, ParamStore};
use crate::numerics::tensor::{
    gemm, gemm_nt, gemm_tn, log_softmax_strided, softmax_strided, transpose_into, ConvGeometry, Tensor,
};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, bias: Var, axis: usize },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Conv {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    NodeMix { adj: Var, x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Sum(Var),
    SmoothedCe {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<Option<usize>>,
        on: f64,
        off: f64,
        normalizer: f64,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
///
/// The lifetime `'p` lets parameter leaves borrow their values from a
/// [`ParamStore`] instead of copying them.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    kink_signature: u64,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Smoothed target distribution for [`Graph::smoothed_cross_entropy`].
#[derive(Debug, Clone, Copy)]
pub struct SmoothingWeights {
    /// Probability mass placed on the target class.
    pub on: f64,
    /// Probability mass placed on each non-target class.
    pub off: f64,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            kink_signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every ReLU on/off pattern seen so far. Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        self.push(Cow::Owned(value), op, inputs)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.owned(value, Op::Constant, &[])
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Constant, &[])
    }

    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.value(id)), Op::Param(id), &[])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.owned(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.owned(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.owned(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.owned(v, Op::Scale(a, s), &[a])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).add_bias(self.value(bias), axis)?;
        Ok(self.owned(v, Op::AddBias { x, bias, axis }, &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.owned(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a[m×k]`, `b[n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (m, k) = at.dims2()?;
        let (n, k2) = bt.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", at.shape(), bt.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(at.data(), bt.data(), &mut out, m, k, n);
        let v = Tensor::from_parts(vec![m, n], out);
        Ok(self.owned(v, Op::MatMulNt(a, b), &[a, b]))
    }

    /// `x · w + b` for a row-major batch `x[n×i]`, `w[i×o]`, `b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b, 1),
            None => Ok(y),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.owned(v, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.owned(v, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(x).permute(perm)?;
        Ok(self.owned(
            v,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut sig = self.kink_signature;
        for &v in x.data() {
            sig = (sig ^ u64::from(v > 0.0)).wrapping_mul(0x0100_0000_01b3);
        }
        let v = x.map(|v| v.max(0.0));
        self.kink_signature = sig;
        self.owned(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.owned(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.owned(v, Op::Tanh(a), &[a])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(x, axis, None)
    }

    /// Softmax along `axis`; positions where `mask` is `true` receive weight
    /// exactly zero (equivalent to a `-inf` logit). `mask` is laid out like `x`.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = t.split_axis(axis)?;
        if let Some(m) = mask {
            if m.len() != t.len() {
                return Err(Error::shape("masked_softmax", t.shape(), &[m.len()]));
            }
        }
        let mut out = t.data().to_vec();
        let mut row_mask = vec![false; len];
        for o in 0..outer {
            for i in 0..inner {
                let start = o * len * inner + i;
                let rm = mask.map(|m| {
                    for (j, slot) in row_mask.iter_mut().enumerate() {
                        *slot = m[start + j * inner];
                    }
                    row_mask.as_slice()
                });
                softmax_strided(&mut out, start, len, inner, rm);
            }
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.owned(v, Op::Softmax { x, axis }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).log_softmax(axis)?;
        Ok(self.owned(v, Op::LogSoftmax { x, axis }, &[x]))
    }

    /// Layer normalisation over the last axis with affine `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().ok_or_else(|| Error::invalid("layer_norm on scalar"))?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != d || b.len() != d {
            return Err(Error::shape("layer_norm", t.shape(), g.shape()));
        }
        let rows = t.len() / d;
        let mut xhat = vec![0.0; t.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.len()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.owned(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&tensors, axis)?;
        Ok(self.owned(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice(axis, start, len)?;
        Ok(self.owned(v, Op::Slice { x, axis, start }, &[x]))
    }

    /// Temporal convolution; see [`Tensor::conv_temporal`].
    pub fn conv_temporal(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        same_padding: bool,
    ) -> Result<Var> {
        let xt = self.value(x);
        let kt = self.value(kernel);
        let geom = ConvGeometry::new(xt.shape(), kt.shape(), same_padding)?;
        if let Some(b) = bias {
            if self.value(b).len() != geom.c_out {
                return Err(Error::shape("conv_temporal bias", kt.shape(), self.value(b).shape()));
            }
        }
        let cols = geom.im2col(xt.data());
        let mut out = vec![0.0; geom.c_out * geom.n * geom.t_out];
        gemm(
            kt.data(),
            &cols,
            &mut out,
            geom.c_out,
            geom.c_in * geom.width,
            geom.n * geom.t_out,
        );
        let mut y = Tensor::from_parts(vec![geom.c_out, geom.n, geom.t_out], out);
        if let Some(b) = bias {
            y = y.add_bias(self.value(b), 0)?;
        }
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.owned(
            y,
            Op::Conv {
                x,
                kernel,
                bias,
                geom,
                cols,
            },
            &inputs,
        ))
    }

    /// Mixes the node axis of `x[C×N×T]` with `adj[P×N]`:
    /// `out[c, i, t] = Σ_j adj[i, j] · x[c, j, t]`.
    pub fn node_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let a = self.value(adj);
        let xt = self.value(x);
        let (p, n) = a.dims2()?;
        let (c, n2, t) = xt.dims3()?;
        if n != n2 {
            return Err(Error::shape("node_mix", a.shape(), xt.shape()));
        }
        let mut out = vec![0.0; c * p * t];
        for ch in 0..c {
            gemm(
                a.data(),
                &xt.data()[ch * n * t..(ch + 1) * n * t],
                &mut out[ch * p * t..(ch + 1) * p * t],
                p,
                n,
                t,
            );
        }
        let v = Tensor::from_parts(vec![c, p, t], out);
        Ok(self.owned(v, Op::NodeMix { adj, x }, &[adj, x]))
    }

    /// Row lookup `table[ids[i]]` producing `[ids.len() × d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding lookup of zero ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::invalid(format!(
                    "token id {id} out of range for table with {rows} rows"
                )));
            }
            out.extend_from_slice(t.row(id));
        }
        let v = Tensor::from_parts(vec![ids.len(), d], out);
        Ok(self.owned(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.owned(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Cross-entropy of `logits[n×V]` against a smoothed one-hot target.
    ///
    /// Rows whose target is `None` (padding) are skipped. The summed loss is
    /// divided by `normalizer`.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        weights: SmoothingWeights,
        normalizer: f64,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (n, v) = t.dims2()?;
        if targets.len() != n {
            return Err(Error::shape("smoothed_cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut logp = t.data().to_vec();
        for r in 0..n {
            log_softmax_strided(&mut logp, r * v, v, 1);
        }
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= v {
                return Err(Error::invalid(format!("target {target} outside vocabulary of {v}")));
            }
            let row = &logp[r * v..(r + 1) * v];
            let mut acc = 0.0;
            for (j, &lp) in row.iter().enumerate() {
                let q = if j == target { weights.on } else { weights.off };
                acc -= q * lp;
            }
            total += acc;
        }
        let probs = logp.iter().map(|lp| lp.exp()).collect();
        let out = Tensor::scalar(total / normalizer);
        Ok(self.owned(
            out,
            Op::SmoothedCe {
                logits,
                probs,
                targets: targets.to_vec(),
                on: weights.on,
                off: weights.off,
                normalizer,
            },
            &[logits],
        ))
    }

    /// Reverse pass from the scalar `loss`, returning parameter gradients.
    pub fn gradients(&self, loss: Var) -> Result<ParamGrads> {
        let mut out = ParamGrads::with_len(0);
        self.gradients_into(loss, &mut out)?;
        Ok(out)
    }

    /// As [`gradients`](Self::gradients), adding into `out`.
    pub fn gradients_into(&self, loss: Var, out: &mut ParamGrads) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(lt.shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, out)?;
        }
        Ok(())
    }

    /// Runs [`gradients`](Self::gradients) and adds the result into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let g = self.gradients(loss)?;
        store.accumulate(&g);
        Ok(())
    }

    /// Accumulation buffer for `v`'s gradient: the parameter's slot in `out`
    /// when `v` is a parameter leaf, otherwise `v`'s pending gradient.
    fn sink<'a>(
        &self,
        v: Var,
        grads: &'a mut [Option<Tensor>],
        out: &'a mut ParamGrads,
    ) -> &'a mut [f64] {
        let shape = self.nodes[v.0].value.shape();
        let t = match self.nodes[v.0].op {
            Op::Param(id) => out.slot(id, shape),
            _ => grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)),
        };
        t.data_mut()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<'p>,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut ParamGrads,
    ) -> Result<()> {
        let send = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.add(*id, g),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    send(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    send(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    send(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    send(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    send(grads, *a, g.mul(self.value(*b))?);
                }
                if self.needs(*b) {
                    send(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, s) => send(grads, *a, g.scale(*s)),
            Op::AddBias { x, bias, axis } => {
                if self.needs(*bias) {
                    let (outer, len, inner) = g.split_axis(*axis)?;
                    let mut gb = vec![0.0; len];
                    for o in 0..outer {
                        for (a, slot) in gb.iter_mut().enumerate() {
                            let base = (o * len + a) * inner;
                            *slot += g.data()[base..base + inner].iter().sum::<f64>();
                        }
                    }
                    send(grads, *bias, Tensor::from_parts(self.value(*bias).shape().to_vec(), gb));
                }
                if self.needs(*x) {
                    send(grads, *x, g);
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k) = at.dims2()?;
                let n = bt.shape()[1];
                if self.needs(*a) {
                    let ga = self.sink(*a, grads, out);
                    gemm_nt(g.data(), bt.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.sink(*b, grads, out);
                    gemm_tn(at.data(), g.data(), gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k) = at.dims2()?;
                let n = bt.shape()[0];
                if self.needs(*a) {
                    let ga = self.sink(*a, grads, out);
                    gemm(g.data(), bt.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = self.sink(*b, grads, out);
                    gemm_tn(g.data(), at.data(), gb, m, n, k);
                }
            }
            Op::Transpose(a) => send(grads, *a, g.transpose()?),
            Op::Reshape(a) => send(grads, *a, g.reshape(self.value(*a).shape())?),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(grads, *x, g.permute(&inv)?);
            }
            Op::Relu(a) => {
                let gx = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                send(grads, *a, gx);
            }
            Op::Sigmoid(a) => send(grads, *a, g.zip_map(y, |g, s| g * s * (1.0 - s))?),
            Op::Tanh(a) => send(grads, *a, g.zip_map(y, |g, t| g * (1.0 - t * t))?),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = y.split_axis(*axis)?;
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let start = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| g.data()[start + j * inner] * y.data()[start + j * inner])
                            .sum();
                        for j in 0..len {
                            let p = start + j * inner;
                            gx[p] = y.data()[p] * (g.data()[p] - dot);
                        }
                    }
                }
                send(grads, *x, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = y.split_axis(*axis)?;
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let start = o * len * inner + i;
                        let total: f64 = (0..len).map(|j| g.data()[start + j * inner]).sum();
                        for j in 0..len {
                            let p = start + j * inner;
                            gx[p] = g.data()[p] - y.data()[p].exp() * total;
                        }
                    }
                }
                send(grads, *x, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = self.value(*gamma);
                let d = gm.len();
                let rows = g.len() / d;
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g.data()[r * d + j] * xhat[r * d + j];
                            gb[j] += g.data()[r * d + j];
                        }
                    }
                    if self.needs(*gamma) {
                        send(grads, *gamma, Tensor::from_parts(gm.shape().to_vec(), gg));
                    }
                    if self.needs(*beta) {
                        send(grads, *beta, Tensor::from_parts(self.value(*beta).shape().to_vec(), gb));
                    }
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gm.data()[j];
                            mean_d += dh;
                            mean_dx += dh * xhat[r * d + j];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gm.data()[j];
                            gx[r * d + j] =
                                inv_std[r] * (dh - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                    send(grads, *x, Tensor::from_parts(g.shape().to_vec(), gx));
                }
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.needs(p) {
                        send(grads, p, g.slice(*axis, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.value(*x).shape();
                let (outer, full, inner) = self.value(*x).split_axis(*axis)?;
                let len = g.shape()[*axis];
                let mut gx = vec![0.0; xs.iter().product()];
                for o in 0..outer {
                    let dst = o * full * inner + start * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                send(grads, *x, Tensor::from_parts(xs.to_vec(), gx));
            }
            Op::Conv {
                x,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let ncols = geom.n * geom.t_out;
                let kw = geom.c_in * geom.width;
                if let Some(b) = bias {
                    if self.needs(*b) {
                        let gb: Vec<f64> = (0..geom.c_out)
                            .map(|o| g.data()[o * ncols..(o + 1) * ncols].iter().sum())
                            .collect();
                        send(grads, *b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                    }
                }
                if self.needs(*kernel) {
                    let gk = self.sink(*kernel, grads, out);
                    gemm_nt(g.data(), cols, gk, geom.c_out, ncols, kw);
                }
                if self.needs(*x) {
                    let kt = self.value(*kernel);
                    let mut gcols = vec![0.0; kw * ncols];
                    gemm_tn(kt.data(), g.data(), &mut gcols, geom.c_out, kw, ncols);
                    let gx = geom.col2im(&gcols);
                    send(grads, *x, Tensor::from_parts(self.value(*x).shape().to_vec(), gx));
                }
            }
            Op::NodeMix { adj, x } => {
                let a = self.value(*adj);
                let xt = self.value(*x);
                let (p, n) = a.dims2()?;
                let (c, _, t) = xt.dims3()?;
                if self.needs(*x) {
                    let at = a.transpose()?;
                    let mut gx = vec![0.0; c * n * t];
                    for ch in 0..c {
                        gemm(
                            at.data(),
                            &g.data()[ch * p * t..(ch + 1) * p * t],
                            &mut gx[ch * n * t..(ch + 1) * n * t],
                            n,
                            p,
                            t,
                        );
                    }
                    send(grads, *x, Tensor::from_parts(xt.shape().to_vec(), gx));
                }
                if self.needs(*adj) {
                    let mut ga = vec![0.0; p * n];
                    let mut xt_t = vec![0.0; n * t];
                    for ch in 0..c {
                        transpose_into(&xt.data()[ch * n * t..(ch + 1) * n * t], &mut xt_t, n, t);
                        gemm(&g.data()[ch * p * t..(ch + 1) * p * t], &xt_t, &mut ga, p, t, n);
                    }
                    send(grads, *adj, Tensor::from_parts(a.shape().to_vec(), ga));
                }
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let d = tt.shape()[1];
                let mut gt = vec![0.0; tt.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g.data()[r * d + j];
                    }
                }
                send(grads, *table, Tensor::from_parts(tt.shape().to_vec(), gt));
            }
            Op::Sum(a) => {
                let s = g.item();
                send(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::SmoothedCe {
                logits,
                probs,
                targets,
                on,
                off,
                normalizer,
            } => {
                let lt = self.value(*logits);
                let (_, v) = lt.dims2()?;
                let q_total = on + off * (v as f64 - 1.0);
                let scale = g.item() / normalizer;
                let mut gl = vec![0.0; lt.len()];
                for (r, target) in targets.iter().enumerate() {
                    let Some(target) = *target else { continue };
                    for j in 0..v {
                        let q = if j == target { *on } else { *off };
                        gl[r * v + j] = scale * (q_total * probs[r * v + j] - q);
                    }
                }
                send(grads, *logits, Tensor::from_parts(lt.shape().to_vec(), gl));
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let s = g.sum(v);
        let grads = g.gradients(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gives_six_at_three() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let sq = g.mul(v, v).unwrap();
        let grads = g.gradients(sq).unwrap();
        assert_eq!(grads.get(p).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(&[2])).unwrap();
        let mut g = Graph::new();
        let v = g.param(&store, p);
        assert!(g.gradients(v).is_err());
    }

    #[test]
    fn two_backward_passes_double_the_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_fn(&[4], |i| i as f64 - 1.5)).unwrap();
        let snapshot = store.clone();
        let mut g = Graph::new();
        let v = g.param(&snapshot, p);
        let t = g.tanh(v);
        let s = g.sum(t);
        g.backward(s, &mut store).unwrap();
        let once = store.get(p).grad.clone();
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get(p).grad, once.scale(2.0));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let mask = [false, true, true, false, false, true];
        let s = g.masked_softmax(x, 1, Some(&mask)).unwrap();
        let v = g.value(s).data();
        assert_eq!(v[0], 1.0);
        assert_eq!((v[1], v[2], v[5]), (0.0, 0.0, 0.0));
        assert!((v[3] + v[4] - 1.0).abs() < 1e-15);
    }
}
