//! Reverse-mode automatic differentiation over a dynamic computation graph.
//!
//! A [`Graph`] is rebuilt for every sentence. Each operation appends a node
//! holding its output value and the ids of its inputs, so node order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Broadcasting is limited to two cases: equal shapes, and a one-element
//! operand against any tensor. Anything else is a [`TensorError::Shape`].
//!
//! ```
//! use factgraph::graph::Graph;
//! use factgraph::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::tensor::{matmul_raw, transpose_raw, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    NarrowCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    RowNormalize(Var),
    Huber { pred: Var, gold: f64, delta: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::NarrowCols(..) => "narrow_cols",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::RowNormalize(_) => "row_normalize",
            Op::Huber { .. } => "huber",
        }
    }
}

/// Deliberate backward-pass corruption, used as a negative control for the
/// gradient checker. Forward values are never affected.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the sigmoid derivative by 1.5.
    SigmoidGrad,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Huber loss on the residual `pred - gold`.
pub fn huber(pred: f64, gold: f64, delta: f64) -> f64 {
    let e = pred - gold;
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `pred`: the residual clipped to
/// `[-delta, delta]`.
pub fn huber_grad(pred: f64, gold: f64, delta: f64) -> f64 {
    (pred - gold).clamp(-delta, delta)
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

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient, present iff the node requires grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::matrix(m, n, matmul_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.same_shape(bv) {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(av.shape().to_vec(), data)
        } else if bv.is_scalar() {
            let y = bv.data()[0];
            Ok(av.map(|x| f(x, y)))
        } else if av.is_scalar() {
            let x = av.data()[0];
            Ok(bv.map(|y| f(x, y)))
        } else {
            Err(shape_err(op, av, bv))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.needs(&[a]);
        self.push(Op::Scale(a, c), out, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.needs(&[a]);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.needs(&[a]);
        self.push(Op::Sigmoid(a), out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    /// Softmax over all elements, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let max = av.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(TensorError::Domain {
                op: "softmax",
                msg: "non-finite input".into(),
            });
        }
        let exps: Vec<f64> = av.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = Tensor::new(
            av.shape().to_vec(),
            exps.into_iter().map(|e| e / total).collect(),
        )?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Softmax(a), out, rg))
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Domain {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total_cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
            total_cols += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total_cols);
        let out = Tensor::new(shape, data)?;
        let rg = self.needs(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), out, rg))
    }

    /// Concatenation along the first dimension; trailing dimensions must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Domain {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let trail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != trail[..] {
                return Err(shape_err("concat_rows", self.value(first), v));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(trail);
        let out = Tensor::new(shape, data)?;
        let rg = self.needs(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, rg))
    }

    /// Selects rows of a matrix (repeats allowed) into a `[len×cols]` matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (n, cols) = av.as_matrix_dims();
        if rows.is_empty() {
            return Err(TensorError::Domain {
                op: "gather_rows",
                msg: "empty index list".into(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::Domain {
                op: "gather_rows",
                msg: format!("row {bad} out of bounds for {n} rows"),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor::matrix(rows.len(), cols, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::GatherRows(a, rows.to_vec()), out, rg))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.gather_rows(a, &[i])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.as_matrix_dims();
        if len == 0 || start + len > cols {
            return Err(TensorError::Domain {
                op: "narrow_cols",
                msg: format!("columns {start}..{} out of range for {cols}", start + len),
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(rows, len, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::NarrowCols(a, start), out, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(TensorError::Domain {
                op: "transpose",
                msg: format!("expected a matrix, got shape {:?}", av.shape()),
            });
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let out = Tensor::matrix(c, r, transpose_raw(av.data(), r, c))?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Transpose(a), out, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape.to_vec())?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(Op::Sum(a), out, rg)
    }

    /// Divides every row of a nonnegative matrix by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (rows, _) = av.as_matrix_dims();
        let mut out = av.clone();
        for r in 0..rows {
            let s: f64 = av.row(r).iter().sum();
            if s <= 0.0 {
                return Err(TensorError::Domain {
                    op: "row_normalize",
                    msg: format!("row {r} sums to {s}"),
                });
            }
            out.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Op::RowNormalize(a), out, rg))
    }

    /// Huber loss of a one-element prediction against a fixed target.
    pub fn huber(&mut self, pred: Var, gold: f64, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(TensorError::Domain {
                op: "huber",
                msg: format!("delta must be positive, got {delta}"),
            });
        }
        let p = self.value(pred).item()?;
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Op::Huber { pred, gold, delta },
            Tensor::scalar(huber(p, gold, delta)),
            rg,
        ))
    }

    /// Accumulates `d loss / d node` into every node that requires grad.
    ///
    /// Gradients add onto whatever is already stored; call
    /// [`Graph::zero_grad`] between independent passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, contrib) in self.local_grads(id, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
            let stored = self.nodes[id]
                .grad
                .as_mut()
                .expect("requires_grad node has grad");
            stored
                .data_mut()
                .iter_mut()
                .zip(&g)
                .for_each(|(s, x)| *s += x);
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn local_grads(&self, id: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        let grads = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut res = Vec::new();
                if wants(*a) {
                    let bt = transpose_raw(bv.data(), k, n);
                    res.push((*a, matmul_raw(g, &bt, m, n, k)));
                }
                if wants(*b) {
                    let at = transpose_raw(av.data(), m, k);
                    res.push((*b, matmul_raw(&at, g, k, m, n)));
                }
                res
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let reduce = |v: Var, s: f64| -> Vec<f64> {
                    if val(v).numel() == g.len() {
                        g.iter().map(|x| s * x).collect()
                    } else {
                        vec![s * g.iter().sum::<f64>()]
                    }
                };
                vec![(*a, reduce(*a, 1.0)), (*b, reduce(*b, sign))]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let other_times_g = |mine: &Tensor, other: &Tensor| -> Vec<f64> {
                    let full: Vec<f64> = if other.numel() == g.len() {
                        g.iter().zip(other.data()).map(|(x, o)| x * o).collect()
                    } else {
                        g.iter().map(|x| x * other.data()[0]).collect()
                    };
                    if mine.numel() == g.len() {
                        full
                    } else {
                        vec![full.iter().sum()]
                    }
                };
                vec![(*a, other_times_g(av, bv)), (*b, other_times_g(bv, av))]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| c * x).collect())],
            Op::Tanh(a) => vec![(
                *a,
                g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect(),
            )],
            Op::Sigmoid(a) => {
                let k = if self.fault == Some(Fault::SigmoidGrad) {
                    1.5
                } else {
                    1.0
                };
                vec![(
                    *a,
                    g.iter()
                        .zip(out)
                        .map(|(x, y)| k * x * y * (1.0 - y))
                        .collect(),
                )]
            }
            Op::Relu(a) => {
                let input = val(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(input)
                        .map(|(x, &i)| if i > 0.0 { *x } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                vec![(*a, g.iter().zip(out).map(|(x, y)| y * (x - dot)).collect())]
            }
            Op::Concat(parts) => {
                let (rows, total) = node.value.as_matrix_dims();
                let mut res: Vec<(Var, Vec<f64>)> = parts
                    .iter()
                    .map(|&p| (p, Vec::with_capacity(val(p).numel())))
                    .collect();
                for r in 0..rows {
                    let mut offset = r * total;
                    for (p, buf) in res.iter_mut() {
                        let w = val(*p).cols();
                        buf.extend_from_slice(&g[offset..offset + w]);
                        offset += w;
                    }
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = val(p).numel();
                        let slice = g[offset..offset + len].to_vec();
                        offset += len;
                        (p, slice)
                    })
                    .collect()
            }
            Op::GatherRows(a, rows) => {
                let av = val(*a);
                let cols = av.cols();
                let mut buf = vec![0.0; av.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    let src = &g[i * cols..(i + 1) * cols];
                    buf[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d += s);
                }
                vec![(*a, buf)]
            }
            Op::NarrowCols(a, start) => {
                let av = val(*a);
                let (rows, cols) = av.as_matrix_dims();
                let len = node.value.cols();
                let mut buf = vec![0.0; av.numel()];
                for r in 0..rows {
                    buf[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*a, buf)]
            }
            Op::Transpose(a) => {
                let s = val(*a).shape();
                vec![(*a, transpose_raw(g, s[1], s[0]))]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
            Op::RowNormalize(a) => {
                let av = val(*a);
                let (rows, cols) = av.as_matrix_dims();
                let mut buf = vec![0.0; av.numel()];
                for r in 0..rows {
                    let s: f64 = av.row(r).iter().sum();
                    let y = &out[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = gr.iter().zip(y).map(|(x, y)| x * y).sum();
                    for c in 0..cols {
                        buf[r * cols + c] = (gr[c] - dot) / s;
                    }
                }
                vec![(*a, buf)]
            }
            Op::Huber { pred, gold, delta } => {
                let p = val(*pred).data()[0];
                vec![(*pred, vec![g[0] * huber_grad(p, *gold, *delta)])]
            }
        };
        debug_assert!(
            grads.iter().all(|(v, d)| d.len() == val(*v).numel()),
            "{} produced a mis-sized gradient",
            node.op.name()
        );
        Ok(grads)
    }
}
