//! Reverse-mode tape over dense tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass and can
//! then back-propagate from a scalar. Graphs borrow a [`ParamStore`]
//! read-only; gradients come back as a separate [`Gradients`] value, so many
//! graphs over the same parameters can run on different threads.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_acc, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SelectCols {
        input: Var,
        idx: Vec<usize>,
    },
    Softmax(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
}

impl Op {
    fn any_input(&self, mut f: impl FnMut(Var) -> bool) -> bool {
        match self {
            Op::Leaf | Op::Param(_) => false,
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => f(*a) || f(*b),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Softmax(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanRows(a) => f(*a),
            Op::Concat(parts, _) => parts.iter().any(|v| f(*v)),
            Op::Slice { input, .. } | Op::SelectCols { input, .. } => f(*input),
            Op::Embedding { table, .. } => f(*table),
            Op::LayerNorm { x, gamma, beta, .. } => f(*x) || f(*gamma) || f(*beta),
            Op::Dropout { x, .. } => f(*x),
            Op::Conv2d {
                x, kernel, bias, ..
            } => f(*x) || f(*kernel) || f(*bias),
        }
    }
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    /// Whether any parameter feeds this node.
    live: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    rng: Option<ChaCha8Rng>,
}

/// How `b` maps onto an `m x n` left operand.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

fn bcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        return Ok(Bcast::Same);
    }
    if b.len() == 2 && b[0] == 1 && b[1] == 1 {
        return Ok(Bcast::Scalar);
    }
    if a.len() == 2 && b.len() == 2 && b[0] == 1 && b[1] == a[1] {
        return Ok(Bcast::Row);
    }
    Err(Error::shape(op, a, b))
}

fn reduce_bcast(kind: Bcast, g: &[f64], cols: usize) -> Vec<f64> {
    match kind {
        Bcast::Same => g.to_vec(),
        Bcast::Scalar => vec![g.iter().sum()],
        Bcast::Row => {
            let mut out = vec![0.0; cols];
            for row in g.chunks(cols) {
                out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
            }
            out
        }
    }
}

/// `f(a[i], b[broadcast i])` over every element of `a`.
fn bmap(kind: Bcast, a: &[f64], b: &[f64], cols: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match kind {
        Bcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::Scalar => a.iter().map(|&x| f(x, b[0])).collect(),
        Bcast::Row => {
            let mut out = Vec::with_capacity(a.len());
            for row in a.chunks(cols) {
                out.extend(row.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
            out
        }
    }
}

fn two_d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
            rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        let mut g = Graph::new(params);
        g.rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Whether gradients can flow from `v` back to a parameter.
    pub fn is_live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    /// Hash of the active side of every relu input. Two evaluations with the
    /// same signature lie on the same linear piece of every relu.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &x in self.value(a).data() {
                    h = (h ^ u64::from(x > 0.0)).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Append a node. Only leaves are screened for non-finite values; interior
    /// values are covered by the check on the loss and its gradients.
    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if matches!(op, Op::Leaf) && !value.is_finite() {
            return Err(Error::Numerical(name.to_string()));
        }
        let nodes = &self.nodes;
        let live = op.any_input(|v| nodes[v.0].live);
        self.nodes.push(Node {
            value: Some(value),
            op,
            live,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            live: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = two_d("matmul", self.value(a))?;
        let (k2, n) = two_d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// `a * b^T` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = two_d("matmul_nt", self.value(a))?;
        let (n, k2) = two_d("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
        );
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMulNT(a, b),
            "matmul_nt",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = two_d("transpose", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), "transpose")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Bcast)> {
        let ta = self.value(a);
        let tb = self.value(b);
        let kind = bcast_kind(name, ta.shape(), tb.shape())?;
        let cols = ta.cols();
        let bd = tb.data();
        let data = bmap(kind, ta.data(), bd, cols, f);
        Ok((Tensor::new(ta.shape().to_vec(), data)?, kind))
    }

    /// Elementwise sum; `b` may be a `1 x n` row or `1 x 1` scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Scale(a, c), "scale")
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x + c).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Shift(a), "shift")
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidInput("concat of nothing".into()));
        }
        let first = two_d("concat", self.value(parts[0]))?;
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = two_d("concat", self.value(p))?;
            if axis == 0 {
                if c != first.1 {
                    return Err(Error::shape("concat", self.shape(parts[0]), self.shape(p)));
                }
                rows += r;
                cols = c;
            } else {
                if r != first.0 {
                    return Err(Error::shape("concat", self.shape(parts[0]), self.shape(p)));
                }
                cols += c;
                rows = r;
            }
        }
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
        } else {
            for i in 0..rows {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row_slice(i));
                }
            }
        }
        self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::Concat(parts.to_vec(), axis),
            "concat",
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (m, n) = two_d("slice", self.value(a))?;
        let src = self.value(a).data();
        let out = match axis {
            0 if start + len <= m && len > 0 => src[start * n..(start + len) * n].to_vec(),
            1 if start + len <= n && len > 0 => {
                let mut o = Vec::with_capacity(m * len);
                for i in 0..m {
                    o.extend_from_slice(&src[i * n + start..i * n + start + len]);
                }
                o
            }
            _ => return Err(Error::shape("slice", &[m, n], &[axis, start, len])),
        };
        let shape = if axis == 0 {
            vec![len, n]
        } else {
            vec![m, len]
        };
        self.push(
            Tensor::new(shape, out)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            "slice",
        )
    }

    /// Row lookup into a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, k) = two_d("embedding", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::InvalidInput("embedding lookup of zero ids".into()));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * k);
        for &id in ids {
            if id >= v {
                return Err(Error::shape("embedding", &[v, k], &[id]));
            }
            out.extend_from_slice(&src[id * k..(id + 1) * k]);
        }
        self.push(
            Tensor::new(vec![ids.len(), k], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    /// Gather columns: `out[:, t] = a[:, idx[t]]`.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = two_d("select_cols", self.value(a))?;
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::shape("select_cols", &[m, n], idx));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * idx.len());
        for i in 0..m {
            out.extend(idx.iter().map(|&j| src[i * n + j]));
        }
        self.push(
            Tensor::new(vec![m, idx.len()], out)?,
            Op::SelectCols {
                input: a,
                idx: idx.to_vec(),
            },
            "select_cols",
        )
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = two_d("softmax", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            out[i * n..(i + 1) * n].iter_mut().for_each(|x| *x /= z);
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(a), "softmax")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Relu(a), "relu")
    }

    /// Layer normalisation over the last axis with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = two_d("layer_norm", self.value(x))?;
        for p in [gamma, beta] {
            if self.shape(p) != [1, n] {
                return Err(Error::shape("layer_norm", &[m, n], self.shape(p)));
            }
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Inverted dropout. Identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::InvalidInput(format!("dropout rate {rate}")));
        }
        let n = self.value(x).len();
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { x, mask }, "dropout")
    }

    /// 2-D convolution of `x: [c, h, w]` with `kernel: [o, c, kh, kw]` and `bias: [1, o]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || stride == 0 {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if self.shape(bias) != [1, ks[0]] {
            return Err(Error::shape("conv2d", &ks, self.shape(bias)));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (o, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let geo = ConvGeometry {
            c,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        };
        let cols = geo.im2col(xd);
        let p = ho * wo;
        let mut out = Vec::with_capacity(o * p);
        for &b in bd {
            out.extend(std::iter::repeat(b).take(p));
        }
        gemm_acc(o, c * kh * kw, p, kd, false, &cols, false, &mut out);
        self.push(
            Tensor::new(vec![o, ho, wo], out)?,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
            "conv2d",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a), "mean")
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = two_d("mean_rows", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for row in src.chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|x| *x /= m as f64);
        self.push(Tensor::new(vec![1, n], out)?, Op::MeanRows(a), "mean_rows")
    }

    /// Back-propagate from scalar `loss` and collect parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        Ok(self.backward_inner(loss, true)?.0)
    }

    /// Like [`Graph::backward`] but also returns the gradient reaching each of `inputs`.
    pub fn backward_with_inputs(
        &self,
        loss: Var,
        inputs: &[Var],
    ) -> Result<(Gradients, Vec<Vec<f64>>)> {
        let (grads, node_grads) = self.backward_inner(loss, false)?;
        let ins = inputs
            .iter()
            .map(|v| {
                node_grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()])
            })
            .collect();
        Ok((grads, ins))
    }

    fn backward_inner(&self, loss: Var, prune: bool) -> Result<(Gradients, Vec<Option<Vec<f64>>>)> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        if !self.value(loss).item().is_finite() {
            return Err(Error::Numerical("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params.len());

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        /// Accumulation buffer of `v`, zeroed on first use.
        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if prune && !node.live && !matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Param(id) => {
                    if prune {
                        out.accumulate_owned(*id, g);
                    } else {
                        out.accumulate(*id, &g);
                        grads[idx] = Some(g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.cols();
                    if !prune || self.is_live(*a) {
                        gemm_acc(
                            m,
                            n,
                            k,
                            &g,
                            false,
                            tb.data(),
                            true,
                            slot(&mut grads, *a, m * k),
                        );
                    }
                    if !prune || self.is_live(*b) {
                        gemm_acc(
                            k,
                            m,
                            n,
                            ta.data(),
                            true,
                            &g,
                            false,
                            slot(&mut grads, *b, k * n),
                        );
                    }
                }
                Op::MatMulNT(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.rows();
                    if !prune || self.is_live(*a) {
                        gemm_acc(
                            m,
                            n,
                            k,
                            &g,
                            false,
                            tb.data(),
                            false,
                            slot(&mut grads, *a, m * k),
                        );
                    }
                    if !prune || self.is_live(*b) {
                        gemm_acc(
                            n,
                            m,
                            k,
                            &g,
                            true,
                            ta.data(),
                            false,
                            slot(&mut grads, *b, n * k),
                        );
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let ga = slot(&mut grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let ta = self.value(*a);
                    let kind = bcast_kind("add", ta.shape(), self.shape(*b))?;
                    let mut gb = reduce_bcast(kind, &g, ta.cols());
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let kind = bcast_kind("mul", ta.shape(), tb.shape())?;
                    let cols = ta.cols();
                    let ad = ta.data();
                    let bd = tb.data();
                    let ga = bmap(kind, &g, bd, cols, |gi, y| gi * y);
                    let full: Vec<f64> = g.iter().zip(ad).map(|(gi, x)| gi * x).collect();
                    acc(&mut grads, *b, reduce_bcast(kind, &full, cols));
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::Shift(a) | Op::Reshape(a) => acc(&mut grads, *a, g),
                Op::Concat(parts, axis) => {
                    let cols = node.value.as_ref().unwrap().cols();
                    if *axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let len = self.value(*p).len();
                            acc(&mut grads, *p, g[off..off + len].to_vec());
                            off += len;
                        }
                    } else {
                        let rows = g.len() / cols;
                        let mut off = 0;
                        for p in parts {
                            let pc = self.value(*p).cols();
                            let mut gp = Vec::with_capacity(rows * pc);
                            for i in 0..rows {
                                gp.extend_from_slice(&g[i * cols + off..i * cols + off + pc]);
                            }
                            acc(&mut grads, *p, gp);
                            off += pc;
                        }
                    }
                }
                Op::Slice { input, axis, start } => {
                    let ti = self.value(*input);
                    let (m, n) = (ti.rows(), ti.cols());
                    let gi = slot(&mut grads, *input, m * n);
                    let add = |dst: &mut [f64], src: &[f64]| {
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b)
                    };
                    if *axis == 0 {
                        add(&mut gi[start * n..start * n + g.len()], &g);
                    } else {
                        let len = g.len() / m;
                        for i in 0..m {
                            add(
                                &mut gi[i * n + start..i * n + start + len],
                                &g[i * len..(i + 1) * len],
                            );
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let k = tt.cols();
                    let gt = slot(&mut grads, *table, tt.len());
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * k..(id + 1) * k]
                            .iter_mut()
                            .zip(&g[r * k..(r + 1) * k])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::SelectCols { input, idx } => {
                    let ti = self.value(*input);
                    let (m, n) = (ti.rows(), ti.cols());
                    let gi = slot(&mut grads, *input, m * n);
                    for i in 0..m {
                        for (t, &j) in idx.iter().enumerate() {
                            gi[i * n + j] += g[i * idx.len() + t];
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let n = y.cols();
                    let yd = y.data();
                    let ga = slot(&mut grads, *a, yd.len());
                    for (i, row) in yd.chunks(n).enumerate() {
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ga[i * n + j] += row[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    acc(
                        &mut grads,
                        *a,
                        g.iter().zip(y).map(|(gi, s)| gi * s * (1.0 - s)).collect(),
                    );
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    acc(
                        &mut grads,
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                            .collect(),
                    );
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = self.value(*x).cols();
                    let gd = self.value(*gamma).data();
                    let mut gx = Vec::with_capacity(xhat.len());
                    let mut gg = vec![0.0; n];
                    let mut gbeta = vec![0.0; n];
                    for (i, inv) in inv_std.iter().enumerate() {
                        let xh = &xhat[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gd[j];
                            sum_d += d;
                            sum_dx += d * xh[j];
                            gg[j] += gr[j] * xh[j];
                            gbeta[j] += gr[j];
                        }
                        for j in 0..n {
                            let d = gr[j] * gd[j];
                            gx.push(inv / n as f64 * (n as f64 * d - sum_d - xh[j] * sum_dx));
                        }
                    }
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => {
                    acc(
                        &mut grads,
                        *x,
                        g.iter().zip(mask).map(|(a, m)| a * m).collect(),
                    );
                }
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let xs = self.shape(*x);
                    let ks = self.shape(*kernel);
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let (o, kh, kw) = (ks[0], ks[2], ks[3]);
                    let os = node.value.as_ref().unwrap().shape();
                    let (ho, wo) = (os[1], os[2]);
                    let geo = ConvGeometry {
                        c,
                        h,
                        w,
                        kh,
                        kw,
                        ho,
                        wo,
                        stride: *stride,
                        pad: *pad,
                    };
                    let xd = self.value(*x).data();
                    let kd = self.value(*kernel).data();
                    let (p, ck) = (ho * wo, c * kh * kw);
                    if !prune || self.is_live(*kernel) {
                        let cols = geo.im2col(xd);
                        gemm_acc(
                            o,
                            p,
                            ck,
                            &g,
                            false,
                            &cols,
                            true,
                            slot(&mut grads, *kernel, o * ck),
                        );
                    }
                    if !prune || self.is_live(*bias) {
                        let gb = slot(&mut grads, *bias, o);
                        for (b, row) in gb.iter_mut().zip(g.chunks(p)) {
                            *b += row.iter().sum::<f64>();
                        }
                    }
                    if !prune || self.is_live(*x) {
                        let mut gcols = vec![0.0; ck * p];
                        gemm_acc(ck, o, p, kd, true, &g, false, &mut gcols);
                        geo.col2im_acc(&gcols, slot(&mut grads, *x, c * h * w));
                    }
                }
                Op::SumAll(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::MeanAll(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut ga = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        ga.extend(g.iter().map(|x| x / m as f64));
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        if !out.is_finite() {
            return Err(Error::Numerical("backward".into()));
        }
        Ok((out, grads))
    }
}

/// Index arithmetic of a padded, strided 2-D convolution.
struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Input position read by patch row `(ic, ky, kx)` at output `(oy, ox)`.
    #[inline]
    fn source(&self, ic: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then(|| (ic * self.h + iy) * self.w + ix)
    }

    /// `[c*kh*kw, ho*wo]` patch matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.ho * self.wo;
        let mut cols = vec![0.0; self.c * self.kh * self.kw * p];
        let mut r = 0;
        for ic in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some(i) = self.source(ic, ky, kx, oy, ox) {
                                row[oy * self.wo + ox] = x[i];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        cols
    }

    /// Scatter-add a patch-matrix gradient back onto the input.
    fn col2im_acc(&self, cols: &[f64], gx: &mut [f64]) {
        let p = self.ho * self.wo;
        let mut r = 0;
        for ic in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some(i) = self.source(ic, ky, kx, oy, ox) {
                                gx[i] += row[oy * self.wo + ox];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
