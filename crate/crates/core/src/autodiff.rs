//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order and values are computed eagerly,
//! so parents always precede children. A backward sweep from a scalar output
//! visits every reachable edge exactly once and accumulates adjoints by
//! plain summation in node order.
//!
//! Node values are flat `f64` vectors; a scalar is a vector of length one.
//! Binary elementwise primitives broadcast a length-one operand.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub type NodeId = usize;

/// A primitive together with its payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    /// `x^p`; non-integer `p` requires a strictly positive base.
    Power(f64),
    Sum,
    Dot,
    /// `A·X` with `A` of shape `rows × cols` (row-major) and `X` a batch of
    /// column vectors stored back to back; the output is the batch of results.
    MatVec {
        rows: usize,
        cols: usize,
    },
    /// `out[k] = x[indices[k]]`.
    Gather(Vec<usize>),
    /// `out[indices[k]] += x[k]` into a zero vector of length `len`.
    ScatterAdd {
        indices: Vec<usize>,
        len: usize,
    },
}

/// Payload-free primitive tags, for callers that name operations by string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Power,
    Sum,
    Dot,
    MatVec,
    Gather,
    ScatterAdd,
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => Self::Constant,
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "div" => Self::Div,
            "neg" => Self::Neg,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tanh" => Self::Tanh,
            "power" => Self::Power,
            "sum" => Self::Sum,
            "dot" => Self::Dot,
            "matvec" => Self::MatVec,
            "gather" => Self::Gather,
            "scatter-add" | "scatter_add" => Self::ScatterAdd,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown primitive tag `{other}`"
                )))
            }
        })
    }
}

/// Optional constants attached to a recorded primitive.
#[derive(Debug, Clone, Default)]
pub struct Payload {
    pub values: Option<Vec<f64>>,
    pub exponent: Option<f64>,
    pub indices: Option<Vec<usize>>,
    pub len: Option<usize>,
    pub shape: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input_count: usize,
    output: Option<NodeId>,
}

/// Gradient plus the number of graph edges the backward sweep traversed.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub gradient: Vec<f64>,
    pub edges_visited: usize,
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

    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    /// Declares an independent input. All inputs precede every other node.
    pub fn input(&mut self, values: Vec<f64>) -> Result<NodeId> {
        if self.nodes.len() != self.input_count {
            return Err(Error::InvalidInput(
                "inputs must be declared before any other node".into(),
            ));
        }
        self.nodes.push(Node {
            op: Op::Input,
            parents: Vec::new(),
            value: values,
        });
        self.input_count += 1;
        Ok(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            parents: Vec::new(),
            value: values,
        });
        self.nodes.len() - 1
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(vec![v])
    }

    /// Marks the node whose gradient [`Tape::reverse_grad`] computes.
    /// Defaults to the most recently recorded node.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1))
    }

    /// Records a primitive given by tag plus payload.
    pub fn record_tagged(
        &mut self,
        tag: Primitive,
        parents: &[NodeId],
        payload: Payload,
    ) -> Result<NodeId> {
        let missing =
            |what: &str| Error::InvalidInput(format!("{tag:?} requires payload `{what}`"));
        let op = match tag {
            Primitive::Constant => {
                return Ok(self.constant(payload.values.ok_or_else(|| missing("values"))?));
            }
            Primitive::Add => Op::Add,
            Primitive::Sub => Op::Sub,
            Primitive::Mul => Op::Mul,
            Primitive::Div => Op::Div,
            Primitive::Neg => Op::Neg,
            Primitive::Exp => Op::Exp,
            Primitive::Log => Op::Log,
            Primitive::Sin => Op::Sin,
            Primitive::Cos => Op::Cos,
            Primitive::Tanh => Op::Tanh,
            Primitive::Power => Op::Power(payload.exponent.ok_or_else(|| missing("exponent"))?),
            Primitive::Sum => Op::Sum,
            Primitive::Dot => Op::Dot,
            Primitive::MatVec => {
                let (rows, cols) = payload.shape.ok_or_else(|| missing("shape"))?;
                Op::MatVec { rows, cols }
            }
            Primitive::Gather => Op::Gather(payload.indices.ok_or_else(|| missing("indices"))?),
            Primitive::ScatterAdd => Op::ScatterAdd {
                indices: payload.indices.ok_or_else(|| missing("indices"))?,
                len: payload.len.ok_or_else(|| missing("len"))?,
            },
        };
        self.record(op, parents)
    }

    /// Appends a node, evaluating it immediately.
    pub fn record(&mut self, op: Op, parents: &[NodeId]) -> Result<NodeId> {
        for &p in parents {
            if p >= self.nodes.len() {
                return Err(Error::InvalidInput(format!(
                    "parent {p} is not on the tape"
                )));
            }
        }
        let arity = match &op {
            Op::Input | Op::Constant => {
                return Err(Error::InvalidInput(
                    "use Tape::input / Tape::constant".into(),
                ))
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Dot | Op::MatVec { .. } => 2,
            _ => 1,
        };
        if parents.len() != arity {
            return Err(Error::Shape(format!(
                "{op:?} takes {arity} parent(s), got {}",
                parents.len()
            )));
        }
        let value = self.forward(&op, parents)?;
        self.nodes.push(Node {
            op,
            parents: parents.to_vec(),
            value,
        });
        Ok(self.nodes.len() - 1)
    }

    fn forward(&self, op: &Op, parents: &[NodeId]) -> Result<Vec<f64>> {
        let a = &self.nodes[parents[0]].value;
        let b = parents.get(1).map(|&p| &self.nodes[p].value);
        let v = match op {
            Op::Input | Op::Constant => unreachable!(),
            Op::Add => broadcast(a, b.unwrap(), |x, y| x + y)?,
            Op::Sub => broadcast(a, b.unwrap(), |x, y| x - y)?,
            Op::Mul => broadcast(a, b.unwrap(), |x, y| x * y)?,
            Op::Div => {
                if b.unwrap().contains(&0.0) {
                    return Err(Error::Domain("division by zero".into()));
                }
                broadcast(a, b.unwrap(), |x, y| x / y)?
            }
            Op::Neg => a.iter().map(|x| -x).collect(),
            Op::Exp => a.iter().map(|x| x.exp()).collect(),
            Op::Log => {
                if a.iter().any(|&x| x <= 0.0) {
                    return Err(Error::Domain("log of a nonpositive value".into()));
                }
                a.iter().map(|x| x.ln()).collect()
            }
            Op::Sin => a.iter().map(|x| x.sin()).collect(),
            Op::Cos => a.iter().map(|x| x.cos()).collect(),
            Op::Tanh => a.iter().map(|x| x.tanh()).collect(),
            Op::Power(p) => {
                if p.fract() != 0.0 && a.iter().any(|&x| x <= 0.0) {
                    return Err(Error::Domain(format!(
                        "non-integer power {p} needs a strictly positive base"
                    )));
                }
                a.iter().map(|x| pow(*x, *p)).collect()
            }
            Op::Sum => vec![a.iter().sum()],
            Op::Dot => {
                let b = b.unwrap();
                if a.len() != b.len() {
                    return Err(Error::Shape(format!(
                        "dot of lengths {} and {}",
                        a.len(),
                        b.len()
                    )));
                }
                vec![a.iter().zip(b).map(|(x, y)| x * y).sum()]
            }
            Op::MatVec { rows, cols } => {
                let x = b.unwrap();
                if a.len() != rows * cols || *cols == 0 || !x.len().is_multiple_of(*cols) {
                    return Err(Error::Shape(format!(
                        "matvec of a {rows}x{cols} matrix (len {}) with input of len {}",
                        a.len(),
                        x.len()
                    )));
                }
                let batch = x.len() / cols;
                let mut out = vec![0.0; rows * batch];
                for bi in 0..batch {
                    let xb = &x[bi * cols..(bi + 1) * cols];
                    for r in 0..*rows {
                        let ar = &a[r * cols..(r + 1) * cols];
                        out[bi * rows + r] = ar.iter().zip(xb).map(|(p, q)| p * q).sum();
                    }
                }
                out
            }
            Op::Gather(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= a.len()) {
                    return Err(Error::Shape(format!(
                        "gather index {bad} out of range {}",
                        a.len()
                    )));
                }
                idx.iter().map(|&i| a[i]).collect()
            }
            Op::ScatterAdd { indices, len } => {
                if indices.len() != a.len() {
                    return Err(Error::Shape(format!(
                        "scatter-add of {} values with {} indices",
                        a.len(),
                        indices.len()
                    )));
                }
                let mut out = vec![0.0; *len];
                for (&i, &v) in indices.iter().zip(a) {
                    if i >= *len {
                        return Err(Error::Shape(format!(
                            "scatter index {i} out of range {len}"
                        )));
                    }
                    out[i] += v;
                }
                out
            }
        };
        Ok(v)
    }

    /// Gradient of the (scalar) output with respect to the requested inputs,
    /// concatenated in request order.
    pub fn reverse_grad(&self, wrt: &[NodeId]) -> Result<Vec<f64>> {
        Ok(self.reverse_grad_report(wrt)?.gradient)
    }

    pub fn reverse_grad_report(&self, wrt: &[NodeId]) -> Result<GradReport> {
        let out = self
            .output()
            .ok_or_else(|| Error::InvalidInput("empty tape".into()))?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Shape(format!(
                "output node {out} is not scalar (len {})",
                self.nodes[out].value.len()
            )));
        }
        for &w in wrt {
            if w >= self.input_count {
                return Err(Error::InvalidInput(format!("node {w} is not an input")));
            }
        }

        let mut reachable = vec![false; out + 1];
        reachable[out] = true;
        for i in (0..=out).rev() {
            if reachable[i] {
                for &p in &self.nodes[i].parents {
                    reachable[p] = true;
                }
            }
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        adj[out] = Some(vec![1.0]);
        let mut edges_visited = 0usize;
        for i in (self.input_count..=out).rev() {
            if !reachable[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            for (slot, &p) in node.parents.iter().enumerate() {
                edges_visited += 1;
                let contrib = self.local_vjp(node, slot, &g);
                let plen = self.nodes[p].value.len();
                let target = adj[p].get_or_insert_with(|| vec![0.0; plen]);
                if contrib.len() == target.len() {
                    for (t, c) in target.iter_mut().zip(&contrib) {
                        *t += c;
                    }
                } else {
                    // Broadcast operand: reduce.
                    target[0] += contrib.iter().sum::<f64>();
                }
            }
        }

        let mut gradient = Vec::new();
        for &w in wrt {
            match &adj[w] {
                Some(g) => gradient.extend_from_slice(g),
                None => gradient.extend(std::iter::repeat_n(0.0, self.nodes[w].value.len())),
            }
        }
        Ok(GradReport {
            gradient,
            edges_visited,
        })
    }

    /// Vector-Jacobian product of `node` with respect to its `slot`-th parent.
    /// Returned at the node's own length when the parent was broadcast.
    fn local_vjp(&self, node: &Node, slot: usize, g: &[f64]) -> Vec<f64> {
        let pv = |k: usize| -> &[f64] { &self.nodes[node.parents[k]].value };
        let y = &node.value;
        let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        match &node.op {
            Op::Input | Op::Constant => Vec::new(),
            Op::Add => g.to_vec(),
            Op::Sub => {
                if slot == 0 {
                    g.to_vec()
                } else {
                    g.iter().map(|x| -x).collect()
                }
            }
            Op::Mul => {
                let other = pv(1 - slot);
                g.iter()
                    .enumerate()
                    .map(|(i, gi)| gi * at(other, i))
                    .collect()
            }
            Op::Div => {
                let (a, b) = (pv(0), pv(1));
                if slot == 0 {
                    g.iter().enumerate().map(|(i, gi)| gi / at(b, i)).collect()
                } else {
                    g.iter()
                        .enumerate()
                        .map(|(i, gi)| {
                            let bi = at(b, i);
                            -gi * at(a, i) / (bi * bi)
                        })
                        .collect()
                }
            }
            Op::Neg => g.iter().map(|x| -x).collect(),
            Op::Exp => g.iter().zip(y).map(|(gi, yi)| gi * yi).collect(),
            Op::Log => g.iter().zip(pv(0)).map(|(gi, x)| gi / x).collect(),
            Op::Sin => g.iter().zip(pv(0)).map(|(gi, x)| gi * x.cos()).collect(),
            Op::Cos => g.iter().zip(pv(0)).map(|(gi, x)| -gi * x.sin()).collect(),
            Op::Tanh => g
                .iter()
                .zip(y)
                .map(|(gi, yi)| gi * (1.0 - yi * yi))
                .collect(),
            Op::Power(p) => g
                .iter()
                .zip(pv(0))
                .map(|(gi, x)| gi * p * pow(*x, p - 1.0))
                .collect(),
            Op::Sum => vec![g[0]; pv(0).len()],
            Op::Dot => pv(1 - slot).iter().map(|x| g[0] * x).collect(),
            Op::MatVec { rows, cols } => {
                let (a, x) = (pv(0), pv(1));
                let batch = x.len() / cols;
                if slot == 0 {
                    let mut da = vec![0.0; rows * cols];
                    for bi in 0..batch {
                        let xb = &x[bi * cols..(bi + 1) * cols];
                        for r in 0..*rows {
                            let gr = g[bi * rows + r];
                            if gr != 0.0 {
                                for (d, xc) in da[r * cols..(r + 1) * cols].iter_mut().zip(xb) {
                                    *d += gr * xc;
                                }
                            }
                        }
                    }
                    da
                } else {
                    let mut dx = vec![0.0; x.len()];
                    for bi in 0..batch {
                        let dxb = &mut dx[bi * cols..(bi + 1) * cols];
                        for r in 0..*rows {
                            let gr = g[bi * rows + r];
                            if gr != 0.0 {
                                for (d, ac) in dxb.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
                                    *d += gr * ac;
                                }
                            }
                        }
                    }
                    dx
                }
            }
            Op::Gather(idx) => {
                let mut dx = vec![0.0; pv(0).len()];
                for (&i, gi) in idx.iter().zip(g) {
                    dx[i] += gi;
                }
                dx
            }
            Op::ScatterAdd { indices, .. } => indices.iter().map(|&i| g[i]).collect(),
        }
    }

    // Convenience builders.

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div, &[a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Neg, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log, &[a])
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sin, &[a])
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Cos, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh, &[a])
    }

    pub fn powf(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.record(Op::Power(p), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum, &[a])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Dot, &[a, b])
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.record(Op::MatVec { rows, cols }, &[a, x])
    }

    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.record(Op::Gather(indices), &[a])
    }

    pub fn scatter_add(&mut self, a: NodeId, indices: Vec<usize>, len: usize) -> Result<NodeId> {
        self.record(Op::ScatterAdd { indices, len }, &[a])
    }

    /// `A·x` for a constant sparse `A`, expressed as gather, scale and scatter-add.
    pub fn spmv_const(&mut self, a: &SparseMatrix, x: NodeId) -> Result<NodeId> {
        if self.value(x).len() != a.cols() {
            return Err(Error::DimensionMismatch {
                context: "tape spmv",
                expected: a.cols(),
                got: self.value(x).len(),
            });
        }
        let mut rows = Vec::with_capacity(a.nnz());
        for r in 0..a.rows() {
            rows.extend(std::iter::repeat_n(r, a.row_nnz(r)));
        }
        let gathered = self.gather(x, a.col_indices().to_vec())?;
        let coeffs = self.constant(a.values().to_vec());
        let scaled = self.mul(gathered, coeffs)?;
        self.scatter_add(scaled, rows, a.rows())
    }
}

fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn broadcast(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    match (a.len(), b.len()) {
        (n, m) if n == m => Ok(a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()),
        (1, _) => Ok(b.iter().map(|y| f(a[0], *y)).collect()),
        (_, 1) => Ok(a.iter().map(|x| f(*x, b[0])).collect()),
        (n, m) => Err(Error::Shape(format!(
            "elementwise op on lengths {n} and {m}"
        ))),
    }
}
