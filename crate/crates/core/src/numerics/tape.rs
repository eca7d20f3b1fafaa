//! Reverse-mode differentiation over an explicit, append-only tape.
//!
//! Each operation appends a node holding its forward value and an [`Op`]
//! that names its parents by id. Because ids only ever grow, the parent
//! graph is acyclic by construction and a single reverse sweep over node
//! ids visits every node after all of its consumers.

use std::sync::Arc;

use super::tensor::{matmul_into, transpose_data, NORM_EPS};
use super::{normalize_row, softmax_row, Tensor, LN_EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `x[m×n] + b[n]` broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x · s` with `s` a differentiable scalar.
    ScaleBy(Var, Var),
    Exp(Var),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    MeanRows(Var),
    /// Mean over rows of `-log softmax(row i)[i]`; caches the softmax.
    DiagCrossEntropy {
        x: Var,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when no path reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// Append-only computation record. Confined to one thread per step.
#[derive(Debug, Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input (data, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = self.any_grad(parents);
        self.push(value, op, rg)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.value(v).shape() {
            &[m, n] => Ok((m, n)),
            s => Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        Ok(self.record(out, Op::Transpose(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(x, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..out.rows() {
            out.row_mut(i)
                .iter_mut()
                .zip(&b)
                .for_each(|(o, bv)| *o += bv);
        }
        Ok(self.record(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.record(out, Op::Scale(x, factor), &[x])
    }

    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::contract("scale_by expects a scalar factor"));
        }
        let f = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * f);
        Ok(self.record(out, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.record(out, Op::Exp(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, Op::Sum(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.record(out, Op::Gelu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (g, b) = (self.value(gain), self.value(bias));
        if g.numel() != d || b.numel() != d {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(xv.shape());
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let (row_hat, inv) = normalize_row(xv.row(i), LN_EPS);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = row_hat[j] * g.data()[j] + b.data()[j];
            }
            xhat.extend(row_hat);
            inv_std.push(inv);
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.record(out, op, &[x, gain, bias]))
    }

    /// Row softmax of `logits + mask`; the mask is a constant.
    pub fn masked_softmax(&mut self, logits: Var, mask: &Arc<Tensor>) -> Result<Var> {
        let out = super::masked_softmax(self.value(logits), mask)?;
        Ok(self.record(out, Op::MaskedSoftmax(logits), &[logits]))
    }

    /// Unmasked row softmax.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let x = self.value(logits);
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.rows() {
            softmax_row(x.row(i), None, out.row_mut(i)).ok_or(Error::InvalidMask { row: i })?;
        }
        Ok(self.record(out, Op::MaskedSoftmax(logits), &[logits]))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let norms: Vec<f64> = (0..xv.rows())
            .map(|i| {
                xv.row(i)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(NORM_EPS)
            })
            .collect();
        let mut out = xv.clone();
        for (i, n) in norms.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        self.record(out, Op::L2NormalizeRows { x, norms }, &[x])
    }

    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (rows, d) = self.matrix_dims(table, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Input {
                index: bad,
                reason: format!("row index out of range for table with {rows} rows"),
            });
        }
        if index.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![index.len(), d], data)?;
        let op = Op::GatherRows {
            table,
            index: index.to_vec(),
        };
        Ok(self.record(out, op, &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.matrix_dims(parts[0], "concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, n) = self.matrix_dims(p, "concat_rows")?;
            if n != d {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![m, n],
                    rhs: vec![rows, d],
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += m;
        }
        let out = Tensor::new(vec![rows, d], data)?;
        Ok(self.record(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, _) = self.matrix_dims(x, "slice_rows")?;
        if start >= end || end > m {
            return Err(Error::contract(format!(
                "row slice {start}..{end} out of range for {m} rows"
            )));
        }
        let out = self.value(x).slice_rows(start, end);
        Ok(self.record(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.matrix_dims(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat_cols")?;
            if pm != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![pm, pn],
                    rhs: vec![m],
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.record(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::contract(format!(
                "column slice {start}..{end} out of range for {n} columns"
            )));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::new(vec![m, end - start], data)?;
        Ok(self.record(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Column means of a matrix, as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "mean_rows")?;
        let xv = self.value(x);
        let mut data = vec![0.0; n];
        for i in 0..m {
            data.iter_mut().zip(xv.row(i)).for_each(|(o, v)| *o += v);
        }
        data.iter_mut().for_each(|v| *v /= m as f64);
        let out = Tensor::new(vec![1, n], data)?;
        Ok(self.record(out, Op::MeanRows(x), &[x]))
    }

    /// Mean over rows of the cross-entropy of `softmax(row i)` against
    /// target class `i`. Requires a square matrix.
    pub fn diag_cross_entropy(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "diag_cross_entropy")?;
        if m != n {
            return Err(Error::Dimension {
                op: "diag_cross_entropy",
                lhs: vec![m, n],
                rhs: vec![n, m],
            });
        }
        let xv = self.value(x);
        let mut probs = vec![0.0; m * n];
        let mut total = 0.0;
        for i in 0..m {
            let row = xv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[i];
            softmax_row(row, None, &mut probs[i * n..(i + 1) * n]);
        }
        let out = Tensor::scalar(total / m as f64);
        Ok(self.record(out, Op::DiagCrossEntropy { x, probs }, &[x]))
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires them. Accumulation order is fixed by node id.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(t.data())
                    .for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let bt = transpose_data(bv.data(), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g.data(), &bt, &mut da, m, n, k);
                    send(*a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.requires_grad(*b) {
                    let at = transpose_data(av.data(), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g.data(), &mut db, k, m, n);
                    send(*b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Transpose(x) => send(*x, g.transpose().unwrap()),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(x, bias) => {
                send(*x, g.clone());
                let n = g.last_dim();
                let mut db = vec![0.0; n];
                for i in 0..g.rows() {
                    db.iter_mut().zip(g.row(i)).for_each(|(d, v)| *d += v);
                }
                let shape = self.value(*bias).shape().to_vec();
                send(*bias, Tensor::new(shape, db).unwrap());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let zip = |o: &Tensor| {
                    Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(o.data()).map(|(x, y)| x * y).collect(),
                    )
                    .unwrap()
                };
                send(*a, zip(bv));
                send(*b, zip(av));
            }
            Op::Scale(x, f) => send(*x, g.map(|v| v * f)),
            Op::ScaleBy(x, s) => {
                let f = self.value(*s).data()[0];
                send(*x, g.map(|v| v * f));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(a, b)| a * b)
                    .sum();
                let shape = self.value(*s).shape().to_vec();
                send(*s, Tensor::new(shape, vec![ds]).unwrap());
            }
            Op::Exp(x) => send(
                *x,
                Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(y.data()).map(|(a, b)| a * b).collect(),
                )
                .unwrap(),
            ),
            Op::Sum(x) => {
                let g0 = g.data()[0];
                send(*x, Tensor::filled(self.value(*x).shape(), g0));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(a, &v)| a * gelu_grad(v))
                    .collect();
                send(*x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = g.last_dim();
                let gv = self.value(*gain).data();
                let mut dx = Tensor::zeros(g.shape());
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for i in 0..g.rows() {
                    let gi = g.row(i);
                    let hi = &xhat[i * d..(i + 1) * d];
                    let dxhat: Vec<f64> = gi.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(hi).map(|(a, b)| a * b).sum();
                    let scale = inv_std[i] / d as f64;
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = scale * (d as f64 * dxhat[j] - s1 - hi[j] * s2);
                        dgain[j] += gi[j] * hi[j];
                        dbias[j] += gi[j];
                    }
                }
                send(*x, dx);
                let gshape = self.value(*gain).shape().to_vec();
                let bshape = self.value(*bias).shape().to_vec();
                send(*gain, Tensor::new(gshape, dgain).unwrap());
                send(*bias, Tensor::new(bshape, dbias).unwrap());
            }
            Op::MaskedSoftmax(x) => {
                let mut dx = Tensor::zeros(g.shape());
                for i in 0..g.rows() {
                    let (gi, yi) = (g.row(i), y.row(i));
                    let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = yi[j] * (gi[j] - dot);
                    }
                }
                send(*x, dx);
            }
            Op::L2NormalizeRows { x, norms } => {
                let mut dx = Tensor::zeros(g.shape());
                for (i, n) in norms.iter().enumerate() {
                    let (gi, yi) = (g.row(i), y.row(i));
                    let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = (gi[j] - yi[j] * dot) / n;
                    }
                }
                send(*x, dx);
            }
            Op::GatherRows { table, index } => {
                let mut dt = Tensor::zeros(self.value(*table).shape());
                for (r, &i) in index.iter().enumerate() {
                    dt.row_mut(i)
                        .iter_mut()
                        .zip(g.row(r))
                        .for_each(|(a, b)| *a += b);
                }
                send(*table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let m = self.value(p).shape()[0];
                    send(p, g.slice_rows(offset, offset + m));
                    offset += m;
                }
            }
            Op::SliceRows { x, start } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let n = g.last_dim();
                dx.data_mut()[start * n..start * n + g.numel()].copy_from_slice(g.data());
                send(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let m = g.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut data = Vec::with_capacity(m * w);
                    for i in 0..m {
                        data.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    send(p, Tensor::new(vec![m, w], data).unwrap());
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let w = g.last_dim();
                for i in 0..g.rows() {
                    dx.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                send(*x, dx);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let m = xv.shape()[0] as f64;
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..xv.rows() {
                    dx.row_mut(i)
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(o, v)| *o = v / m);
                }
                send(*x, dx);
            }
            Op::DiagCrossEntropy { x, probs } => {
                let n = self.value(*x).shape()[0];
                let scale = g.data()[0] / n as f64;
                let mut dx = probs.iter().map(|p| p * scale).collect::<Vec<_>>();
                for i in 0..n {
                    dx[i * n + i] -= scale;
                }
                send(*x, Tensor::new(vec![n, n], dx).unwrap());
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_root_has_unit_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let grads = tape.backward(x).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[2, 2], 1.0));
        let c = tape.constant(Tensor::filled(&[2, 2], 2.0));
        let p = tape.matmul(x, c).unwrap();
        let root = tape.sum(p);
        let grads = tape.backward(root).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[4.0; 4]);
    }

    #[test]
    fn matmul_gradient_is_b_transpose_broadcast() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![5.0, -1.0], vec![6.0, 0.5]]).unwrap());
        let p = tape.matmul(a, b).unwrap();
        let root = tape.sum(p);
        let grads = tape.backward(root).unwrap();
        // d sum(AB) / dA[i,k] = sum_j B[k,j]
        assert_eq!(grads.get(a).unwrap().data(), &[4.0, 6.5, 4.0, 6.5]);
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let x =
                tape.leaf(Tensor::new(vec![2, 3], vec![0.1, -0.7, 1.3, 2.2, 0.4, -1.1]).unwrap());
            let xt = tape.transpose(x).unwrap();
            let p = tape.matmul(x, xt).unwrap();
            let s = tape.softmax(p).unwrap();
            let q = tape.matmul(s, x).unwrap();
            let g = tape.gelu(q);
            let root = tape.sum(g);
            let grads = tape.backward(root).unwrap();
            grads.get(x).unwrap().clone()
        };
        let (a, b) = (build(), build());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
