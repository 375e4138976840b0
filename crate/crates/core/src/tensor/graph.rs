use std::collections::HashMap;

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::smoothing::{self, TargetDistribution};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which key positions each query row may attend to.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionMask {
    None,
    /// Row `i` sees keys `0..=i`.
    Causal,
    /// `true` marks an attendable key (non-PAD) position.
    Keys(Vec<bool>),
}

impl AttentionMask {
    fn allowed(&self, rows: usize, cols: usize) -> Vec<bool> {
        let mut out = vec![true; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = match self {
                    AttentionMask::None => true,
                    AttentionMask::Causal => j <= i,
                    AttentionMask::Keys(keys) => keys[j],
                };
            }
        }
        out
    }
}

/// Projection parameters of one multi-head attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [1, n]` broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SmoothedXent {
        logits: Var,
        probs: Vec<Vec<f64>>,
        targets: Vec<Option<TargetDistribution>>,
    },
    Sum(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Reverse-mode tape over 2-D tensors. Parameters are read from a borrowed
/// [`ParamStore`]; [`Graph::backward`] returns their gradients by name.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` with `a: [m, k]`, `b: [m, n]`, `out: [k, n]`.
fn matmul_at_b(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let o = &mut out[p * n..(p + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: [m, n]`, `b: [k, n]`, `out: [m, k]`.
fn matmul_a_bt(a: &[f64], m: usize, n: usize, b: &[f64], k: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let br = &b[j * n..(j + 1) * n];
            out[i * k + j] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(name), None) => &self.params.params[name],
            _ => unreachable!("node without value"),
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, false)
    }

    /// Parameter leaf. Repeated calls with one name share a node.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.param_vars.get(name) {
            return v;
        }
        assert!(self.params.get(name).is_some(), "unknown parameter {name}");
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        matmul(
            self.value(a).data(),
            m,
            k,
            self.value(b).data(),
            n,
            &mut out,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.dims(a);
        let (k, n2) = self.dims(b);
        assert_eq!(n, n2, "matmul_t inner dimension");
        let mut out = vec![0.0; m * k];
        matmul_a_bt(
            self.value(a).data(),
            m,
            n,
            self.value(b).data(),
            k,
            &mut out,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulT(a, b), Tensor::matrix(m, k, out), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), Tensor::matrix(m, n, out), ng)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(bias), (1, n), "bias shape");
        let b = self.value(bias).data();
        let out = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % n])
            .collect();
        let ng = self.needs(a) || self.needs(bias);
        self.push(Op::AddRow(a, bias), Tensor::matrix(m, n, out), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shapes");
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), Tensor::matrix(m, n, out), ng)
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .map(|x| scale * x + shift)
            .collect();
        let ng = self.needs(a);
        self.push(Op::Affine(a, scale), Tensor::matrix(m, n, out), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.needs(a);
        self.push(op, Tensor::matrix(m, n, out), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.dims(p);
                assert_eq!(r, m, "concat_cols row count");
                c
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(m, n, out),
            ng,
        )
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let n = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            assert_eq!(c, n, "stack_rows width");
            out.extend_from_slice(self.value(p).data());
            m += r;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::StackRows(parts.to_vec()), Tensor::matrix(m, n, out), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= m, "slice_rows out of range");
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        self.push(Op::SliceRows(a, start), Tensor::matrix(len, n, out), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, 1)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= n, "slice_cols out of range");
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), Tensor::matrix(m, len, out), ng)
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.dims(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "gather id {id} out of range {v}");
            out.extend_from_slice(src.row(id));
        }
        let ng = self.needs(table);
        self.push(
            Op::Gather(table, ids.to_vec()),
            Tensor::matrix(ids.len(), d, out),
            ng,
        )
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        self.masked_softmax(a, &vec![true; m * n])
            .expect("unmasked softmax cannot fail")
    }

    /// Row-wise softmax; entries with `allowed = false` get exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(a);
        assert_eq!(allowed.len(), m * n, "mask shape");
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = super::ops::masked_softmax(src.row(i), &allowed[i * n..(i + 1) * n])?;
            out.extend(row);
        }
        let ng = self.needs(a);
        Ok(self.push(Op::Softmax(a), Tensor::matrix(m, n, out), ng))
    }

    /// Row-wise layer normalization with learned gain and bias `[1, n]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (m, n) = self.dims(x);
        assert_eq!(self.dims(gain), (1, n));
        assert_eq!(self.dims(bias), (1, n));
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            Tensor::matrix(m, n, out),
            ng,
        )
    }

    /// Sum over rows of the label-smoothed cross-entropy between
    /// `softmax(logits[i])` and `targets[i]`; rows with `None` are ignored.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<Option<TargetDistribution>>,
    ) -> Result<Var> {
        let (m, n) = self.dims(logits);
        assert_eq!(targets.len(), m, "one target slot per logits row");
        let src = self.value(logits);
        let mut probs = Vec::with_capacity(m);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let p = super::ops::softmax(src.row(i));
            if let Some(t) = t {
                if t.len() != n {
                    return Err(Error::config(format!(
                        "target distribution over {} classes, logits over {}",
                        t.len(),
                        n
                    )));
                }
                total += smoothing::cross_entropy(&p, t)?;
            }
            probs.push(p);
        }
        if !total.is_finite() {
            return Err(Error::numeric("non-finite loss"));
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Op::SmoothedXent {
                logits,
                probs,
                targets,
            },
            Tensor::matrix(1, 1, vec![total]),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Op::Sum(a), Tensor::matrix(1, 1, vec![s]), ng)
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    /// Scaled dot-product attention split over `heads`, concatenated and
    /// projected through `w.wo`, `w.bo`.
    pub fn multi_head_attention(
        &mut self,
        queries: Var,
        keys: Var,
        values: Var,
        w: &AttentionVars,
        heads: usize,
        mask: &AttentionMask,
    ) -> Result<Var> {
        let d = self.dims(w.wq).1;
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let q = self.matmul(queries, w.wq);
        let k = self.matmul(keys, w.wk);
        let v = self.matmul(values, w.wv);
        let tq = self.dims(q).0;
        let tk = self.dims(k).0;
        let allowed = mask.allowed(tq, tk);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh);
            let kh = self.slice_cols(k, h * dh, dh);
            let vh = self.slice_cols(v, h * dh, dh);
            let scores = self.matmul_t(qh, kh);
            let scores = self.affine(scores, scale, 0.0);
            let weights = self.masked_softmax(scores, &allowed)?;
            outs.push(self.matmul(weights, vh));
        }
        let joined = if heads == 1 {
            outs[0]
        } else {
            self.concat_cols(&outs)
        };
        Ok(self.linear(joined, w.wo, Some(w.bo)))
    }

    /// Multiplicative (dot-product) attention of each query row over
    /// `memory` rows. Returns `(contexts, weights)`.
    pub fn dot_attention(
        &mut self,
        queries: Var,
        memory: Var,
        keys: &[bool],
    ) -> Result<(Var, Var)> {
        let tq = self.dims(queries).0;
        let scores = self.matmul_t(queries, memory);
        let allowed = AttentionMask::Keys(keys.to_vec()).allowed(tq, keys.len());
        let weights = self.masked_softmax(scores, &allowed)?;
        let ctx = self.matmul(weights, memory);
        Ok((ctx, weights))
    }

    /// Reverse-mode sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0; self.value(root).len()]);

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Param(_) | Op::Input) {
                grads[i] = Some(gout);
                continue;
            }
            self.propagate(&node.op, Var(i), &gout, &mut grads);
        }

        let mut out = Gradients::default();
        for (name, &v) in &self.param_vars {
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| vec![0.0; self.value(v).len()]);
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter {name} at element {bad}"
                )));
            }
            let shape = self.value(v).shape().to_vec();
            out.insert(name.clone(), Tensor::new(shape, g)?);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op, me: Var, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.value(me);
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |g| matmul_a_bt(gout, m, n, bv, k, g));
                self.accumulate(grads, *b, |g| matmul_at_b(av, m, k, gout, n, g));
            }
            Op::MatMulT(a, b) => {
                let (m, n) = self.dims(*a);
                let k = self.dims(*b).0;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |g| matmul(gout, m, k, bv, n, g));
                self.accumulate(grads, *b, |g| matmul_at_b(gout, m, k, av, n, g));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |g| {
                        g.iter_mut().zip(gout).for_each(|(x, y)| *x += y)
                    });
                }
            }
            Op::AddRow(a, b) => {
                let n = self.dims(*b).1;
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += y)
                });
                self.accumulate(grads, *b, |g| {
                    for (i, y) in gout.iter().enumerate() {
                        g[i % n] += y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |g| {
                    for ((x, y), w) in g.iter_mut().zip(gout).zip(bv) {
                        *x += y * w;
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for ((x, y), w) in g.iter_mut().zip(gout).zip(av) {
                        *x += y * w;
                    }
                });
            }
            Op::Affine(a, scale) => {
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += scale * y)
                });
            }
            Op::Sigmoid(a) => {
                let s = out.data();
                self.accumulate(grads, *a, |g| {
                    for ((x, y), s) in g.iter_mut().zip(gout).zip(s) {
                        *x += y * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let t = out.data();
                self.accumulate(grads, *a, |g| {
                    for ((x, y), t) in g.iter_mut().zip(gout).zip(t) {
                        *x += y * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for ((x, y), v) in g.iter_mut().zip(gout).zip(av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let n = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    self.accumulate(grads, p, |g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gout[i * n + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |g| {
                        g.iter_mut()
                            .zip(&gout[offset..offset + len])
                            .for_each(|(x, y)| *x += y)
                    });
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = out.cols();
                self.accumulate(grads, *a, |g| {
                    g[start * n..start * n + gout.len()]
                        .iter_mut()
                        .zip(gout)
                        .for_each(|(x, y)| *x += y)
                });
            }
            Op::SliceCols(a, start) => {
                let n = self.dims(*a).1;
                let (m, w) = (out.rows(), out.cols());
                self.accumulate(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * n + start + j] += gout[i * w + j];
                        }
                    }
                });
            }
            Op::Gather(table, ids) => {
                let d = out.cols();
                self.accumulate(grads, *table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[id * d + j] += gout[r * d + j];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let (m, n) = (out.rows(), out.cols());
                let y = out.data();
                self.accumulate(grads, *a, |g| {
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &gout[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = (out.rows(), out.cols());
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |g| {
                    for i in 0..m * n {
                        g[i % n] += gout[i] * xhat[i];
                    }
                });
                self.accumulate(grads, *bias, |g| {
                    for i in 0..m * n {
                        g[i % n] += gout[i];
                    }
                });
                self.accumulate(grads, *x, |g| {
                    let nf = n as f64;
                    for i in 0..m {
                        let dxhat: Vec<f64> = (0..n).map(|j| gout[i * n + j] * gv[j]).collect();
                        let xh = &xhat[i * n..(i + 1) * n];
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[i * n + j] += inv_std[i] / nf * (nf * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                });
            }
            Op::SmoothedXent {
                logits,
                probs,
                targets,
            } => {
                let scale = gout[0];
                let n = self.dims(*logits).1;
                self.accumulate(grads, *logits, |g| {
                    for (i, (p, t)) in probs.iter().zip(targets).enumerate() {
                        if let Some(t) = t {
                            let d = smoothing::softmax_gradient(p, t);
                            for j in 0..n {
                                g[i * n + j] += scale * d[j];
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = gout[0];
                self.accumulate(grads, *a, |g| g.iter_mut().for_each(|x| *x += s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "w",
            Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]),
        )
        .unwrap();
        s.insert("b", Tensor::matrix(1, 3, vec![0.01, 0.02, 0.03]))
            .unwrap();
        s
    }

    #[test]
    fn linear_sum_gradient_is_input_broadcast() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::matrix(1, 2, vec![2.0, -1.0]));
        let w = g.param("w");
        let y = g.matmul(x, w);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(
            grads.get("w").unwrap().data(),
            &[2.0, 2.0, 2.0, -1.0, -1.0, -1.0]
        );
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let s = store();
        let mut g = Graph::new(&s);
        let _w = g.param("w");
        let c = g.input(Tensor::matrix(1, 1, vec![3.0]));
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        assert!(grads.get("w").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_mask_layout() {
        let m = AttentionMask::Causal.allowed(3, 3);
        assert_eq!(
            m,
            vec![true, false, false, true, true, false, true, true, true]
        );
    }

    #[test]
    fn fully_masked_row_is_numeric_error() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let q = g.input(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        let mem = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let err = g.dot_attention(q, mem, &[false, false]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
