//! Tape-based reverse-mode differentiation over [`Array`]s.
//!
//! Every primitive appends one node holding its forward value. Node indices
//! are a topological order, so the backward sweep is a single reverse pass.

use super::array::{gemm, split_axis, Array};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var, usize),
    LayerNorm { x: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    SqErrSum(Var, Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    L2NormRows { x: Var, norms: Vec<f64> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient, or zeros shaped like the node when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Array {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(tape.value(v).shape()))
    }

    /// Node indices in the order the backward sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
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

    /// Drops every node recorded after the first `len`; vars pointing past
    /// `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Array, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rows_cols(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(op, x, y)?;
        Ok(Array::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.rows_cols(x)?;
        if self.value(row).len() != c {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        Ok((r, c))
    }

    /// `x[i, j] + row[j]` for every row `i`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast("add_row", x, row)?;
        let b = self.value(row).data();
        let out = self.value(x).data().iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Array::from_parts(shape, out), Op::AddRow(x, row), &[x, row]))
    }

    /// `x[i, j] * row[j]` for every row `i`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_broadcast("mul_row", x, row)?;
        let b = self.value(row).data();
        let out = self.value(x).data().iter().enumerate().map(|(i, &v)| v * b[i % c]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Array::from_parts(shape, out), Op::MulRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Multiply by a one-element node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Dimension {
                op: "scale_by",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let k = self.value(s).item();
        let out = self.value(x).map(|v| v * k);
        Ok(self.push(out, Op::ScaleBy(x, s), &[x, s]))
    }

    /// `x + c` for a constant array `c` (e.g. an attention mask).
    pub fn add_const(&mut self, x: Var, c: &Array) -> Result<Var> {
        same_shape("add_const", self.value(x), c)?;
        let out = Array::from_parts(
            c.shape().to_vec(),
            self.value(x).data().iter().zip(c.data()).map(|(a, b)| a + b).collect(),
        );
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.value(x).softmax(axis)?;
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    /// Normalize each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.rows_cols(x)?;
        let src = self.value(x).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[i] = s;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * s;
            }
        }
        let out = Array::from_parts(vec![r, c], xhat.clone());
        Ok(self.push(out, Op::LayerNorm { x, xhat, rstd }, &[x]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.rows_cols(logits)?;
        if targets.len() != r {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("cross_entropy: target {t} out of {c} classes")));
        }
        let probs = self.value(logits).softmax(1)?.into_data();
        let nll = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -probs[i * c + t].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / r as f64;
        Ok(self.push(
            Array::scalar(nll),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `sum((a - b)^2)`.
    pub fn sq_err_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sq_err_sum", x, y)?;
        let s = x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        Ok(self.push(Array::scalar(s), Op::SqErrSum(a, b), &[a, b]))
    }

    /// `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sq_err_sum(a, b)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push(Array::scalar(m), Op::Mean(x), &[x])
    }

    /// Rows `idx` of a rank-2 node (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.rows_cols(x)?;
        if idx.is_empty() {
            return Err(Error::Domain("gather_rows: empty index list".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Contract(format!("gather_rows: row {bad} out of {r}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(src.row(i));
        }
        Ok(self.push(
            Array::from_parts(vec![idx.len(), c], out),
            Op::GatherRows(x, idx.to_vec()),
            &[x],
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Domain("concat_rows: no inputs".into()))?;
        let (_, c) = self.rows_cols(first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.rows_cols(p)?;
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Array::from_parts(vec![rows, c], out), Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rows_cols(x)?;
        if len == 0 || start + len > c {
            return Err(Error::Contract(format!("slice_cols {start}+{len} of {c} columns")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Array::from_parts(vec![r, len], out), Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Domain("concat_cols: no inputs".into()))?;
        let (r, _) = self.rows_cols(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.rows_cols(p)?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Array::from_parts(vec![r, total], out), Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Column means as a `[1, c]` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rows_cols(x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        Ok(self.push(Array::from_parts(vec![1, c], out), Op::MeanRows(x), &[x]))
    }

    /// Scale each row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rows_cols(x)?;
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(r);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            for j in 0..c {
                out[i * c + j] = row[j] / n;
            }
        }
        Ok(self.push(Array::from_parts(vec![r, c], out), Op::L2NormRows { x, norms }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(self.shape(loss), 1.0));
        let mut visited = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(&contrib)
                    .for_each(|(e, c)| *e += c),
                slot @ None => {
                    *slot = Some(Array::from_parts(self.shape(v).to_vec(), contrib));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.rows_cols(*a)?;
                let (_, n) = self.rows_cols(*b)?;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                    acc(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()?.into_data()),
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(y).map(|(g, y)| g * y).collect());
                acc(*b, gd.iter().zip(x).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, row) => {
                let c = self.value(*row).len();
                acc(*x, gd.to_vec());
                let mut db = vec![0.0; c];
                gd.iter().enumerate().for_each(|(i, g)| db[i % c] += g);
                acc(*row, db);
            }
            Op::MulRow(x, row) => {
                let c = self.value(*row).len();
                let (xd, rd) = (self.value(*x).data(), self.value(*row).data());
                acc(*x, gd.iter().enumerate().map(|(i, g)| g * rd[i % c]).collect());
                let mut db = vec![0.0; c];
                gd.iter().enumerate().for_each(|(i, g)| db[i % c] += g * xd[i]);
                acc(*row, db);
            }
            Op::Scale(x, s) => acc(*x, gd.iter().map(|g| g * s).collect()),
            Op::ScaleBy(x, s) => {
                let k = self.value(*s).item();
                acc(*x, gd.iter().map(|g| g * k).collect());
                let ds = gd.iter().zip(self.value(*x).data()).map(|(g, v)| g * v).sum();
                acc(*s, vec![ds]);
            }
            Op::AddConst(x) => acc(*x, gd.to_vec()),
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                acc(*x, gd.iter().zip(xd).map(|(g, &v)| g * gelu_grad(v)).collect());
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis)?;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let (r, c) = self.rows_cols(*x)?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let gr = &gd[i * c..(i + 1) * c];
                    let xr = &xhat[i * c..(i + 1) * c];
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgx = gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = rstd[i] * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                acc(*x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, c) = self.rows_cols(*logits)?;
                let scale = gd[0] / r as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] -= scale;
                }
                acc(*logits, dx);
            }
            Op::SqErrSum(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| 2.0 * gd[0] * (p - q)).collect();
                if self.requires_grad(*b) {
                    acc(*b, d.iter().map(|v| -v).collect());
                }
                acc(*a, d);
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![gd[0] / n as f64; n]);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.rows_cols(*x)?;
                let mut dx = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += gd[k * c + j];
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, gd[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.rows_cols(*x)?;
                let (_, w) = node.value.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let (_, w) = self.rows_cols(p)?;
                    let mut dp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        dp.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                    }
                    acc(p, dp);
                    off += w;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.rows_cols(*x)?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = gd[j] / r as f64;
                    }
                }
                acc(*x, dx);
            }
            Op::L2NormRows { x, norms } => {
                let (r, c) = self.rows_cols(*x)?;
                let y = node.value.data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &gd[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Array::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn visits_each_node_once_in_reverse_order() {
        let mut t = Tape::new();
        let x = t.leaf(Array::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.matmul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let s = t.tanh(z);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        let order = g.visit_order();
        assert!(order.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(order.len(), t.len());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Array::scalar(2.0));
        let c = t.constant(Array::scalar(5.0));
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Array::filled(&[1, 5], 3.7));
        let y = t.layer_norm(x, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_of_delta_prediction_is_zero() {
        let mut t = Tape::new();
        let logits = t.leaf(Array::from_rows(&[vec![0.0, 1e4, 0.0]]).unwrap());
        let l = t.cross_entropy(logits, &[1]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn mse_of_self_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Array::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let l = t.mse(x, x).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_reduction_is_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[2, 2]));
        assert!(matches!(t.gather_rows(x, &[]), Err(Error::Domain(_))));
        assert!(matches!(t.concat_rows(&[]), Err(Error::Domain(_))));
        assert!(Array::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }
}
