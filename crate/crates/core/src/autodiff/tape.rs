//! Reverse-mode tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse creation order and accumulates gradients
//! additively, so a value consumed twice receives the sum of both paths.
//! Parameters are read straight out of the [`ParameterStore`] and never
//! copied onto the tape; embedding-table gradients come back row-sparse.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamGrads, ParamId, ParameterStore};
use super::tensor::{SparseVector, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

enum Op {
    Leaf,
    Param(ParamId),
    SparseEmbed {
        table: Var,
        inputs: Arc<[SparseVector]>,
    },
    RowNormalize(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
    },
    Pool {
        input: Var,
        kind: PoolKind,
        rows: usize,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Tanh(Var),
    Hadamard(Var, Var),
    MulConst {
        input: Var,
        factors: Vec<f64>,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Add(Var, Var),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
        len: usize,
    },
    Stack(Vec<Var>),
    SumRows(Var),
    Sum(Var),
    Softmax(Var),
    PairLoss {
        s1: Var,
        s2: Var,
        w1: f64,
        w2: f64,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'a> {
    params: &'a ParameterStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    pub params: ParamGrads,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a recorded value; `None` when it is off every
    /// path to the loss (exact zero).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(what: &str, detail: String) -> Error {
    Error::config(format!("{what}: {detail}"))
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParameterStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant, or a differentiable leaf if `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// The tape variable for a stored parameter (one node per parameter).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Row `t` of the output is `Σ value · table[index]` over the entries of
    /// `inputs[t]`; an empty sparse vector yields a zero row.
    pub fn sparse_embed(
        &mut self,
        inputs: impl Into<Arc<[SparseVector]>>,
        table: Var,
    ) -> Result<Var> {
        let inputs = inputs.into();
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(shape_err("sparse_embed", "table must be a matrix".into()));
        }
        let (n, l) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; inputs.len() * l];
        for (row, sv) in inputs.iter().enumerate() {
            if sv.dim() != n {
                return Err(shape_err(
                    "sparse_embed",
                    format!("input dimension {} but table has {n} rows", sv.dim()),
                ));
            }
            let dst = &mut out[row * l..(row + 1) * l];
            for &(j, v) in sv.entries() {
                let src = t.row(j as usize);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        let value = Tensor::new(vec![inputs.len(), l], out)?;
        Ok(self.push(value, Op::SparseEmbed { table, inputs }, &[table]))
    }

    /// Scales every row to unit L2 norm; zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|a| *a /= norm);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(value, Op::RowNormalize(x), &[x])
    }

    /// Valid 1-D convolution: `input [seq, c_in]`, `weight [ws, c_in, c_out]`,
    /// `bias [c_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if stride == 0 {
            return Err(shape_err("conv1d", "stride must be positive".into()));
        }
        if x.shape().len() != 2 || w.shape().len() != 3 {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, weight {:?}", x.shape(), w.shape()),
            ));
        }
        let (seq, cin) = (x.shape()[0], x.shape()[1]);
        let (ws, wcin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if wcin != cin || b.len() != cout {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        if seq < ws {
            return Err(Error::InputTooShort {
                len: seq,
                window: ws,
            });
        }
        let out_seq = (seq - ws) / stride + 1;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = Vec::with_capacity(out_seq * cout);
        for p in 0..out_seq {
            let mut acc = bd.to_vec();
            for k in 0..ws {
                let xrow = &xd[(p * stride + k) * cin..(p * stride + k + 1) * cin];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wd[(k * cin + c) * cout..(k * cin + c + 1) * cout];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
            out.extend_from_slice(&acc);
        }
        let value = Tensor::new(vec![out_seq, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            },
            &[input, weight, bias],
        ))
    }

    /// Column-wise pooling over all rows.
    pub fn pool(&mut self, input: Var, kind: PoolKind) -> Result<Var> {
        let rows = self.value(input).rows();
        self.pool_rows(input, kind, rows)
    }

    /// Column-wise pooling over the leading `rows` rows. Max pooling routes the
    /// gradient to the first maximal row of each column.
    pub fn pool_rows(&mut self, input: Var, kind: PoolKind, rows: usize) -> Result<Var> {
        let x = self.value(input);
        if x.shape().len() != 2 {
            return Err(shape_err("pool", format!("input {:?}", x.shape())));
        }
        if rows == 0 || rows > x.shape()[0] {
            return Err(shape_err(
                "pool",
                format!("cannot pool {rows} rows of {:?}", x.shape()),
            ));
        }
        let c = x.shape()[1];
        let mut out = vec![0.0; c];
        let mut argmax = Vec::new();
        match kind {
            PoolKind::Max => {
                argmax = vec![0; c];
                out.copy_from_slice(x.row(0));
                for r in 1..rows {
                    for (j, &v) in x.row(r).iter().enumerate() {
                        if v > out[j] {
                            out[j] = v;
                            argmax[j] = r;
                        }
                    }
                }
            }
            PoolKind::Avg => {
                for r in 0..rows {
                    for (o, &v) in out.iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                let n = rows as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Pool {
                input,
                kind,
                rows,
                argmax,
            },
            &[input],
        ))
    }

    /// Affine map over the last axis: `input [.., in] · weight [in, out] + bias [out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if w.shape().len() != 2 {
            return Err(shape_err("dense", format!("weight {:?}", w.shape())));
        }
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        if x.last_dim() != din || b.len() != dout {
            return Err(shape_err(
                "dense",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        let rows = x.rows();
        let (xd, wd) = (x.data(), w.data());
        let mut out = Vec::with_capacity(rows * dout);
        for r in 0..rows {
            let mut acc = b.data().to_vec();
            for (i, &xv) in xd[r * din..(r + 1) * din].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (a, &wv) in acc.iter_mut().zip(&wd[i * dout..(i + 1) * dout]) {
                    *a += xv * wv;
                }
            }
            out.extend_from_slice(&acc);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|a| a.tanh()).collect(),
        )
        .unwrap();
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "hadamard",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Hadamard(a, b), &[a, b]))
    }

    /// Elementwise product with a constant tensor (masks, dropout patterns).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != factors.len() {
            return Err(shape_err(
                "mul_const",
                format!("{} values vs {} factors", xv.len(), factors.len()),
            ));
        }
        let data = xv.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst { input: x, factors }, &[x]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|a| a * factor).collect(),
        )
        .unwrap();
        self.push(value, Op::Scale { input: x, factor }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Concatenation along the last axis; all parts must share leading rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no parts".into()));
        }
        let rows = self.value(parts[0]).rows();
        let lead: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape()[..v.shape().len() - 1] != lead[..] {
                return Err(shape_err(
                    "concat",
                    format!("incompatible part shape {:?}", v.shape()),
                ));
            }
            total += v.last_dim();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.last_dim();
        if start + len > cols || len == 0 {
            return Err(shape_err(
                "slice",
                format!("[{start}, {}) of {cols} columns", start + len),
            ));
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Slice {
                input: x,
                start,
                len,
            },
            &[x],
        ))
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("stack", "no parts".into()));
        }
        let width = self.value(parts[0]).len();
        let mut out = Vec::with_capacity(parts.len() * width);
        for &p in parts {
            let v = self.value(p);
            if v.len() != width {
                return Err(shape_err("stack", format!("row of {} vs {width}", v.len())));
            }
            out.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![parts.len(), width], out)?;
        Ok(self.push(value, Op::Stack(parts.to_vec()), parts))
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.last_dim();
        let mut out = vec![0.0; cols];
        for r in 0..xv.rows() {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(Tensor::vector(out), Op::SumRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(0.0, |a, b| a + b);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x).data();
        let m = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|a| (a - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = Tensor::vector(e.into_iter().map(|a| a / z).collect());
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Weighted pairwise cross-entropy of two scalar scores:
    /// `-(w1 · ln p1 + w2 · ln(1 - p1))` with `p1 = softmax(s1, s2)[0]`.
    pub fn pair_loss(&mut self, s1: Var, s2: Var, w1: f64, w2: f64) -> Result<Var> {
        let a = self.value(s1).item()?;
        let b = self.value(s2).item()?;
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let loss = -(w1 * (a - lse) + w2 * (b - lse));
        Ok(self.push(
            Tensor::scalar(loss),
            Op::PairLoss { s1, s2, w1, w2 },
            &[s1, s2],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::config(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut pgrads = ParamGrads::new(self.params.len());
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads, &mut pgrads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads[idx] {
                    pgrads.accumulate_dense(id, g);
                }
            }
        }
        Ok(Gradients {
            params: pgrads,
            nodes: grads,
        })
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        pgrads: &mut ParamGrads,
    ) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::SparseEmbed { table, inputs } => {
                if !self.needs(*table) {
                    return;
                }
                let l = self.value(*table).shape()[1];
                match self.nodes[table.0].op {
                    Op::Param(id) => {
                        let mut row_grad = vec![0.0; l];
                        for (t, sv) in inputs.iter().enumerate() {
                            let gt = &g[t * l..(t + 1) * l];
                            for &(j, v) in sv.entries() {
                                for (r, &x) in row_grad.iter_mut().zip(gt) {
                                    *r = v * x;
                                }
                                pgrads.accumulate_row(self.params, id, j as usize, &row_grad);
                            }
                        }
                    }
                    _ => {
                        let n = self.value(*table).len();
                        let dst = slot(grads, *table, n);
                        for (t, sv) in inputs.iter().enumerate() {
                            let gt = &g[t * l..(t + 1) * l];
                            for &(j, v) in sv.entries() {
                                let j = j as usize;
                                for (d, &x) in dst[j * l..(j + 1) * l].iter_mut().zip(gt) {
                                    *d += v * x;
                                }
                            }
                        }
                    }
                }
            }
            Op::RowNormalize(x) => {
                let xv = self.value(*x);
                let y = out.unwrap();
                let cols = xv.last_dim();
                let dst = slot(grads, *x, xv.len());
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let norm = xr.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dst[r * cols + c] += (gr[c] - yr[c] * dot) / norm;
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (cin, ws, cout) = (x.shape()[1], w.shape()[0], w.shape()[2]);
                let out_seq = g.len() / cout;
                if self.needs(*bias) {
                    let db = slot(grads, *bias, cout);
                    for p in 0..out_seq {
                        for (d, &v) in db.iter_mut().zip(&g[p * cout..(p + 1) * cout]) {
                            *d += v;
                        }
                    }
                }
                if self.needs(*weight) {
                    let xd = x.data();
                    let dw = slot(grads, *weight, w.len());
                    for p in 0..out_seq {
                        let gp = &g[p * cout..(p + 1) * cout];
                        for k in 0..ws {
                            let base = (p * stride + k) * cin;
                            for c in 0..cin {
                                let xv = xd[base + c];
                                if xv == 0.0 {
                                    continue;
                                }
                                let off = (k * cin + c) * cout;
                                for (d, &gv) in dw[off..off + cout].iter_mut().zip(gp) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
                if self.needs(*input) {
                    let wd = w.data();
                    let dx = slot(grads, *input, x.len());
                    for p in 0..out_seq {
                        let gp = &g[p * cout..(p + 1) * cout];
                        for k in 0..ws {
                            let base = (p * stride + k) * cin;
                            for c in 0..cin {
                                let off = (k * cin + c) * cout;
                                let s: f64 =
                                    wd[off..off + cout].iter().zip(gp).map(|(a, b)| a * b).sum();
                                dx[base + c] += s;
                            }
                        }
                    }
                }
            }
            Op::Pool {
                input,
                kind,
                rows,
                argmax,
            } => {
                let x = self.value(*input);
                let c = x.last_dim();
                let dx = slot(grads, *input, x.len());
                match kind {
                    PoolKind::Max => {
                        for (j, &r) in argmax.iter().enumerate() {
                            dx[r * c + j] += g[j];
                        }
                    }
                    PoolKind::Avg => {
                        let n = *rows as f64;
                        for r in 0..*rows {
                            for j in 0..c {
                                dx[r * c + j] += g[j] / n;
                            }
                        }
                    }
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (din, dout) = (w.shape()[0], w.shape()[1]);
                let rows = x.rows();
                if self.needs(*bias) {
                    let db = slot(grads, *bias, dout);
                    for r in 0..rows {
                        for (d, &v) in db.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                            *d += v;
                        }
                    }
                }
                if self.needs(*weight) {
                    let xd = x.data();
                    let dw = slot(grads, *weight, w.len());
                    for r in 0..rows {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let xv = xd[r * din + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (d, &gv) in dw[i * dout..(i + 1) * dout].iter_mut().zip(gr) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                if self.needs(*input) {
                    let wd = w.data();
                    let dx = slot(grads, *input, x.len());
                    for r in 0..rows {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let s: f64 = wd[i * dout..(i + 1) * dout]
                                .iter()
                                .zip(gr)
                                .map(|(a, b)| a * b)
                                .sum();
                            dx[r * din + i] += s;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let y = out.unwrap().data();
                let dx = slot(grads, *x, y.len());
                for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                    *d += gv * (1.0 - yv * yv);
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let bv = bv.to_vec();
                    let da = slot(grads, *a, bv.len());
                    for ((d, &o), &gv) in da.iter_mut().zip(&bv).zip(g) {
                        *d += gv * o;
                    }
                }
                if self.needs(*b) {
                    let av = av.to_vec();
                    let db = slot(grads, *b, av.len());
                    for ((d, &o), &gv) in db.iter_mut().zip(&av).zip(g) {
                        *d += gv * o;
                    }
                }
            }
            Op::MulConst { input, factors } => {
                let dx = slot(grads, *input, factors.len());
                for ((d, &f), &gv) in dx.iter_mut().zip(factors).zip(g) {
                    *d += gv * f;
                }
            }
            Op::Scale { input, factor } => {
                let dx = slot(grads, *input, g.len());
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let d = slot(grads, v, g.len());
                        for (x, &gv) in d.iter_mut().zip(g) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.unwrap().last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let n = self.value(p).len();
                        let d = slot(grads, p, n);
                        for r in 0..rows {
                            for c in 0..w {
                                d[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { input, start, len } => {
                let xv = self.value(*input);
                let cols = xv.last_dim();
                let dx = slot(grads, *input, xv.len());
                for r in 0..xv.rows() {
                    for c in 0..*len {
                        dx[r * cols + start + c] += g[r * len + c];
                    }
                }
            }
            Op::Stack(parts) => {
                let width = g.len() / parts.len();
                for (r, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let d = slot(grads, p, width);
                        for (x, &gv) in d.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::SumRows(x) => {
                let xv = self.value(*x);
                let cols = g.len();
                let dx = slot(grads, *x, xv.len());
                for r in 0..xv.rows() {
                    for c in 0..cols {
                        dx[r * cols + c] += g[c];
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let dx = slot(grads, *x, n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Softmax(x) => {
                let y = out.unwrap().data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                let dx = slot(grads, *x, y.len());
                for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                    *d += yv * (gv - dot);
                }
            }
            Op::PairLoss { s1, s2, w1, w2 } => {
                let a = self.value(*s1).data()[0];
                let b = self.value(*s2).data()[0];
                let p1 = pair_probability(a, b);
                let total = w1 + w2;
                let d1 = -w1 + total * p1;
                let d2 = -w2 + total * (1.0 - p1);
                if self.needs(*s1) {
                    slot(grads, *s1, 1)[0] += g[0] * d1;
                }
                if self.needs(*s2) {
                    slot(grads, *s2, 1)[0] += g[0] * d2;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// `exp(a) / (exp(a) + exp(b))`, evaluated without overflow.
pub fn pair_probability(a: f64, b: f64) -> f64 {
    if a >= b {
        1.0 / (1.0 + (b - a).exp())
    } else {
        let e = (a - b).exp();
        e / (1.0 + e)
    }
}
