use std::collections::HashMap;

use rand::Rng;

use super::param::{ParamGrads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `[m, n] + [1, n]`, the bias broadcast.
    AddRow(usize, usize),
    /// `[m, n] * [m, 1]`, scaling each row by its own factor.
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    Abs(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumLastDim(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        start: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    BceLogits {
        input: usize,
        targets: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLastDim(..) => "sum_lastdim",
            Op::Softmax(..) => "softmax_lastdim",
            Op::LogSoftmax(..) => "log_softmax_lastdim",
            Op::Concat(..) => "concat_lastdim",
            Op::Slice { .. } => "slice_lastdim",
            Op::Embedding { .. } => "embedding_lookup",
            Op::Dropout { .. } => "dropout",
            Op::BceLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse scan is a valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite value produced by {}",
                op.name()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf for a parameter. Repeated calls for the same parameter
    /// return the same node, so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).tensor.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Copy of `x`'s value that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs matrices, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        let (av, bv) = (ta.values(), tb.values());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let values = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(&[a.0, b.0]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return Err(Error::Dimension(format!(
                "add_row: row of {} values for {n} columns",
                tr.len()
            )));
        }
        let values = ta
            .values()
            .chunks(n)
            .flat_map(|r| r.iter().zip(tr.values()).map(|(&x, &b)| x + b))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(&[a.0, row.0]);
        self.push(t, Op::AddRow(a.0, row.0), rg)
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.len() != ta.rows() {
            return Err(Error::Dimension(format!(
                "mul_col: {} factors for {} rows",
                tc.len(),
                ta.rows()
            )));
        }
        let n = ta.cols();
        let values = ta
            .values()
            .chunks(n)
            .zip(tc.values())
            .flat_map(|(r, &c)| r.iter().map(move |&x| x * c))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(&[a.0, col.0]);
        self.push(t, Op::MulCol(a.0, col.0), rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.values().iter().map(|&x| f(x)).collect(),
        )?;
        let rg = self.rg(&[a.0]);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, Op::Scale(a.0, k), |x| k * x)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a.0), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a.0), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).values().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        self.map(a, Op::Log(a.0), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a.0), f64::exp)
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a.0), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a.0), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.values().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(m), Op::Mean(a.0), rg)
    }

    /// Sums each last-dim slice, keeping a trailing extent of 1.
    pub fn sum_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let values = t
            .values()
            .chunks(t.cols())
            .map(|r| r.iter().sum())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let out = Tensor::new(shape, values)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::SumLastDim(a.0), rg)
    }

    /// Row-wise softmax over the last extent, stabilized by subtracting the
    /// row maximum.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let values = t.values().chunks(t.cols()).flat_map(softmax_row).collect();
        let out = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Softmax(a.0), rg)
    }

    pub fn log_softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let values = t
            .values()
            .chunks(t.cols())
            .flat_map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + r.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                r.iter().map(move |&x| x - lse)
            })
            .collect();
        let out = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::LogSoftmax(a.0), rg)
    }

    /// Concatenates along the last extent; leading extents must agree.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let lead = &self.value(*first).shape()[..self.value(*first).shape().len() - 1];
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if &s[..s.len() - 1] != lead {
                return Err(Error::Dimension(format!(
                    "concat_lastdim: leading extents {lead:?} vs {:?}",
                    &s[..s.len() - 1]
                )));
            }
            cols += s[s.len() - 1];
        }
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                values.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(cols);
        let out = Tensor::new(shape, values)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        self.push(out, Op::Concat(ids), rg)
    }

    /// Columns `start..start + len` of the last extent.
    pub fn slice_lastdim(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.cols() {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of {} columns",
                start + len,
                t.cols()
            )));
        }
        let values = t
            .values()
            .chunks(t.cols())
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, values)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Slice { input: a.0, start }, rg)
    }

    /// Gathers column `ids[b]` of a `[d, V]` table into row `b` of a
    /// `[B, d]` result.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Dimension("embedding table must be [d, V]".into()));
        }
        let (d, vocab) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Data(format!(
                "category id {bad} out of range for table with {vocab} entries"
            )));
        }
        if ids.is_empty() {
            return Err(Error::Dimension("embedding lookup of zero ids".into()));
        }
        let tv = t.values();
        let mut values = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            values.extend((0..d).map(|j| tv[j * vocab + id]));
        }
        let out = Tensor::matrix(ids.len(), d, values)?;
        let rg = self.rg(&[table.0]);
        self.push(
            out,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Evaluation mode (or `rate == 0`) is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let values = t.values().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(&[x.0]);
        self.push(out, Op::Dropout { input: x.0, mask }, rg)
    }

    /// Per-element binary cross-entropy of `sigmoid(logits)` against
    /// `targets`, computed in the overflow-free softplus form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "bce: {} logits vs {} targets",
                t.len(),
                targets.len()
            )));
        }
        let values = t
            .values()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let out = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(&[logits.0]);
        self.push(
            out,
            Op::BceLogits {
                input: logits.0,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(&id, &v)| (id, v)).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.values();
        let val = |j: usize| self.nodes[j].value.values();
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[j].requires_grad {
                return;
            }
            let buf = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (av, bv) = (ta.values(), tb.values());
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let n = val(*r).len();
                acc(*r, &mut |gr| {
                    for row in g.chunks(n) {
                        add_into(gr, row);
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (val(*a), val(*c));
                let n = self.nodes[*a].value.cols();
                acc(*a, &mut |ga| {
                    for ((grow, orow), &f) in g.chunks(n).zip(ga.chunks_mut(n)).zip(cv) {
                        orow.iter_mut().zip(grow).for_each(|(o, &x)| *o += x * f);
                    }
                });
                acc(*c, &mut |gc| {
                    for ((grow, arow), o) in g.chunks(n).zip(av.chunks(n)).zip(gc.iter_mut()) {
                        *o += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(o, &x)| *o += k * x)
            }),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                    *o += x * y * (1.0 - y);
                }
            }),
            Op::Log(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        *o += x / v;
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                    *o += x * y;
                }
            }),
            Op::Abs(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        } else if v < 0.0 {
                            *o -= x;
                        }
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        *o += 2.0 * v * x;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::SumLastDim(a) => {
                let n = self.nodes[*a].value.cols();
                acc(*a, &mut |ga| {
                    for (orow, &x) in ga.chunks_mut(n).zip(g) {
                        orow.iter_mut().for_each(|o| *o += x);
                    }
                });
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                acc(*a, &mut |ga| {
                    for ((orow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((o, &x), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (x - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let n = node.value.cols();
                acc(*a, &mut |ga| {
                    for ((orow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n))
                    {
                        let total: f64 = grow.iter().sum();
                        for ((o, &x), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += x - y.exp() * total;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let n = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    acc(p, &mut |gp| {
                        for (orow, grow) in gp.chunks_mut(w).zip(g.chunks(n)) {
                            add_into(orow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { input, start } => {
                let n = self.nodes[*input].value.cols();
                let w = node.value.cols();
                acc(*input, &mut |gi| {
                    for (orow, grow) in gi.chunks_mut(n).zip(g.chunks(w)) {
                        add_into(&mut orow[*start..start + w], grow);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let vocab = self.nodes[*table].value.cols();
                let d = node.value.cols();
                acc(*table, &mut |gt| {
                    for (grow, &id) in g.chunks(d).zip(ids) {
                        for (j, &x) in grow.iter().enumerate() {
                            gt[j * vocab + id] += x;
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => acc(*input, &mut |gi| {
                for ((o, &x), &m) in gi.iter_mut().zip(g).zip(mask) {
                    *o += x * m;
                }
            }),
            Op::BceLogits { input, targets } => {
                let zv = val(*input);
                acc(*input, &mut |gi| {
                    for (((o, &x), &z), &y) in gi.iter_mut().zip(g).zip(zv).zip(targets) {
                        *o += x * (sigmoid(z) - y);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_row(r: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = r.iter().map(|&x| (x - m).exp()).sum();
    r.iter().map(move |&x| (x - m).exp() / z)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` when the root does
    /// not depend on `v` through a tracked path.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient buffers for every parameter in `store`; parameters the root
    /// does not touch get zeros.
    pub fn for_params(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros(store);
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out.get_mut(id).copy_from_slice(g);
            }
        }
        out
    }
}
