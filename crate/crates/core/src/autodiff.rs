//! Minimal reverse-mode differentiation.
//!
//! A [`Graph`] records operations in construction order, which is already a
//! topological order: every node's inputs have smaller ids. [`Graph::backward`]
//! walks the nodes once in reverse and returns per-parameter [`Gradients`].
//!
//! Trainable tensors live in a [`ParamSet`] that the graph borrows, so an
//! embedding table is never copied into a graph. Gradients of
//! [`Graph::gather`] into a parameter stay row-sparse until they are
//! accumulated.
//!
//! ```
//! use answervault::autodiff::{Graph, ParamSet, Tensor};
//!
//! let mut params = ParamSet::new();
//! let x = params.add("x", Tensor::vector(vec![1.0, 2.0]));
//! let mut g = Graph::new(&params);
//! let xn = g.param(x);
//! let sq = g.square(xn);
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! grads.accumulate_into(&mut params);
//! assert_eq!(params.grad(x), &[2.0, 4.0]);
//! ```

use std::collections::{BTreeMap, HashMap};

use crate::{Error, Result};

/// Denominator floor for the Euclidean-distance gradient at D = 0.
pub const DISTANCE_EPS: f64 = 1e-12;

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Named trainable tensors with gradient buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Plain gradient descent: `value -= lr * grad`.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            for (v, g) in p.value.values.iter_mut().zip(&p.grad) {
                *v -= lr * g;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.values.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: NodeId, ids: Vec<u32> },
    MeanPool { input: NodeId, length: usize },
    Affine { w: NodeId, b: NodeId, x: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Euclidean(NodeId, NodeId),
    Cosine(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Square(NodeId),
    LnClamped { input: NodeId, lo: f64, hi: f64 },
    Sum(NodeId),
    AddN(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
}

/// Operation recorder over a borrowed parameter set.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match (&self.nodes[id.0].value, &self.nodes[id.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(p)) => self.params.value(*p),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf bound to a trainable parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// Rows of a `[V, E]` table selected by `ids`, giving `[ids.len(), E]`.
    pub fn gather(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let t = self.value(table);
        let [rows, cols] = t.shape() else {
            return Err(shape_err("embedding_gather", format!("table must be 2-D, got {:?}", t.shape())));
        };
        let (rows, cols) = (*rows, *cols);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            let r = id as usize;
            if r >= rows {
                return Err(Error::TokenOutOfRange { id, size: rows });
            }
            out.extend_from_slice(&t.values()[r * cols..(r + 1) * cols]);
        }
        let value = Tensor {
            shape: vec![ids.len(), cols],
            values: out,
        };
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    /// Mean of the first `length` rows of an `[L, E]` matrix; zeros when
    /// `length` is 0.
    pub fn mean_pool(&mut self, input: NodeId, length: usize) -> Result<NodeId> {
        let t = self.value(input);
        let [rows, cols] = t.shape() else {
            return Err(shape_err("masked_mean_pool", format!("input must be 2-D, got {:?}", t.shape())));
        };
        let (rows, cols) = (*rows, *cols);
        if length > rows {
            return Err(shape_err(
                "masked_mean_pool",
                format!("length {length} exceeds {rows} rows"),
            ));
        }
        let mut out = vec![0.0; cols];
        if length > 0 {
            for r in 0..length {
                for (o, v) in out.iter_mut().zip(&t.values()[r * cols..(r + 1) * cols]) {
                    *o += v;
                }
            }
            let inv = 1.0 / length as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(Op::MeanPool { input, length }, Tensor::vector(out)))
    }

    /// `w · x + b` for `w: [O, I]`, `b: [O]`, `x: [I]`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wt, bt, xt) = (self.value(w), self.value(b), self.value(x));
        let ok = matches!(wt.shape(), [o, i] if bt.shape() == [*o] && xt.shape() == [*i]);
        if !ok {
            return Err(shape_err(
                "affine",
                format!("w {:?}, b {:?}, x {:?}", wt.shape(), bt.shape(), xt.shape()),
            ));
        }
        let (o, i) = (wt.shape()[0], wt.shape()[1]);
        let out: Vec<f64> = (0..o)
            .map(|r| {
                let row = &wt.values()[r * i..(r + 1) * i];
                bt.values()[r] + row.iter().zip(xt.values()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Ok(self.push(Op::Affine { w, b, x }, Tensor::vector(out)))
    }

    fn unary(&mut self, input: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let t = self.value(input);
        let value = Tensor {
            shape: t.shape.clone(),
            values: t.values.iter().map(|&v| f(v)).collect(),
        };
        self.push(op, value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(x, Op::LnClamped { input: x, lo, hi }, |v| v.clamp(lo, hi).ln())
    }

    fn check_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, op_name: &'static str, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        self.check_same(op_name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let value = Tensor {
            shape: ta.shape.clone(),
            values: ta.values.iter().zip(&tb.values).map(|(&x, &y)| f(x, y)).collect(),
        };
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `sqrt(Σ (uᵢ − vᵢ)²)` as a scalar.
    pub fn euclidean_distance(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        self.check_same("euclidean_distance", u, v)?;
        let d = euclidean(self.value(u).values(), self.value(v).values());
        Ok(self.push(Op::Euclidean(u, v), Tensor::scalar(d)))
    }

    /// Cosine of the angle between `u` and `v`; 0 if either has zero norm.
    pub fn cosine_similarity(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        self.check_same("cosine_similarity", u, v)?;
        let c = cosine(self.value(u).values(), self.value(v).values());
        Ok(self.push(Op::Cosine(u, v), Tensor::scalar(c)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).values.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Element-wise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("add_n", "no inputs".into()));
        };
        for &x in &xs[1..] {
            self.check_same("add_n", first, x)?;
        }
        let mut out = self.value(first).clone();
        for &x in &xs[1..] {
            for (o, v) in out.values.iter_mut().zip(&self.value(x).values) {
                *o += v;
            }
        }
        Ok(self.push(Op::AddN(xs.to_vec()), out))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<NodeGrad>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NodeGrad::Dense(vec![1.0]));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Op::Param(p) = node.op {
                out.add(p, grad);
                continue;
            }
            let g = match grad {
                NodeGrad::Dense(g) => g,
                rows @ NodeGrad::Rows { .. } => rows.into_dense(self.value(NodeId(idx)).len()),
            };
            let value = self.value(NodeId(idx));
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Gather { table, ids } => {
                    let cols = self.value(*table).shape()[1];
                    for (k, &id) in ids.iter().enumerate() {
                        add_row(&mut grads, *table, id as usize, cols, &g[k * cols..(k + 1) * cols]);
                    }
                }
                Op::MeanPool { input, length } => {
                    let cols = g.len();
                    if *length > 0 {
                        let inv = 1.0 / *length as f64;
                        let mut dx = vec![0.0; self.value(*input).len()];
                        for r in 0..*length {
                            for (d, gv) in dx[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *d = gv * inv;
                            }
                        }
                        add_dense(&mut grads, *input, &dx);
                    }
                }
                Op::Affine { w, b, x } => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let i = xt.len();
                    let mut dw = vec![0.0; wt.len()];
                    let mut dx = vec![0.0; i];
                    for (r, &gr) in g.iter().enumerate() {
                        let row = &wt.values()[r * i..(r + 1) * i];
                        for c in 0..i {
                            dw[r * i + c] = gr * xt.values()[c];
                            dx[c] += gr * row[c];
                        }
                    }
                    add_dense(&mut grads, *w, &dw);
                    add_dense(&mut grads, *b, &g);
                    add_dense(&mut grads, *x, &dx);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).values();
                    let dx: Vec<f64> = g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    add_dense(&mut grads, *x, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = g.iter().zip(value.values()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_dense(&mut grads, *x, &dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = g.iter().zip(value.values()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    add_dense(&mut grads, *x, &dx);
                }
                Op::Scale(x, f) => {
                    let dx: Vec<f64> = g.iter().map(|g| g * f).collect();
                    add_dense(&mut grads, *x, &dx);
                }
                Op::AddScalar(x) => add_dense(&mut grads, *x, &g),
                Op::Square(x) => {
                    let xv = self.value(*x).values();
                    let dx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    add_dense(&mut grads, *x, &dx);
                }
                Op::LnClamped { input, lo, hi } => {
                    let xv = self.value(*input).values();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > *lo && v < *hi { g / v } else { 0.0 })
                        .collect();
                    add_dense(&mut grads, *input, &dx);
                }
                Op::Add(a, b) => {
                    add_dense(&mut grads, *a, &g);
                    add_dense(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    add_dense(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_dense(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    add_dense(&mut grads, *a, &da);
                    add_dense(&mut grads, *b, &db);
                }
                Op::Euclidean(u, v) => {
                    let (uv, vv) = (self.value(*u).values(), self.value(*v).values());
                    let scale = g[0] / value.item().max(DISTANCE_EPS);
                    let du: Vec<f64> = uv.iter().zip(vv).map(|(a, b)| scale * (a - b)).collect();
                    let dv: Vec<f64> = du.iter().map(|d| -d).collect();
                    add_dense(&mut grads, *u, &du);
                    add_dense(&mut grads, *v, &dv);
                }
                Op::Cosine(u, v) => {
                    let (uv, vv) = (self.value(*u).values(), self.value(*v).values());
                    let nu = norm(uv);
                    let nv = norm(vv);
                    if nu > 0.0 && nv > 0.0 {
                        let c = value.item();
                        let inv = 1.0 / (nu * nv);
                        let du: Vec<f64> = uv
                            .iter()
                            .zip(vv)
                            .map(|(a, b)| g[0] * (b * inv - c * a / (nu * nu)))
                            .collect();
                        let dv: Vec<f64> = uv
                            .iter()
                            .zip(vv)
                            .map(|(a, b)| g[0] * (a * inv - c * b / (nv * nv)))
                            .collect();
                        add_dense(&mut grads, *u, &du);
                        add_dense(&mut grads, *v, &dv);
                    }
                }
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).len()];
                    add_dense(&mut grads, *x, &dx);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        add_dense(&mut grads, *x, &g);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum NodeGrad {
    Dense(Vec<f64>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl NodeGrad {
    fn into_dense(self, len: usize) -> Vec<f64> {
        match self {
            NodeGrad::Dense(g) => g,
            NodeGrad::Rows { cols, rows } => {
                let mut out = vec![0.0; len];
                for (r, row) in rows {
                    for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out
            }
        }
    }

    fn add(&mut self, other: NodeGrad, len: usize) {
        match (&mut *self, other) {
            (NodeGrad::Dense(a), NodeGrad::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (NodeGrad::Rows { rows, .. }, NodeGrad::Rows { rows: other, .. }) => {
                for (r, row) in other {
                    match rows.get_mut(&r) {
                        Some(dst) => dst.iter_mut().zip(row).for_each(|(x, y)| *x += y),
                        None => {
                            rows.insert(r, row);
                        }
                    }
                }
            }
            (NodeGrad::Dense(a), rows @ NodeGrad::Rows { .. }) => {
                let b = rows.into_dense(len);
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (slot @ NodeGrad::Rows { .. }, NodeGrad::Dense(mut b)) => {
                let a = std::mem::replace(slot, NodeGrad::Dense(Vec::new())).into_dense(len);
                b.iter_mut().zip(a).for_each(|(x, y)| *x += y);
                *slot = NodeGrad::Dense(b);
            }
        }
    }
}

fn add_dense(grads: &mut [Option<NodeGrad>], node: NodeId, g: &[f64]) {
    match &mut grads[node.0] {
        slot @ None => *slot = Some(NodeGrad::Dense(g.to_vec())),
        Some(NodeGrad::Dense(a)) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        Some(existing) => existing.add(NodeGrad::Dense(g.to_vec()), g.len()),
    }
}

fn add_row(grads: &mut [Option<NodeGrad>], node: NodeId, row: usize, cols: usize, g: &[f64]) {
    let slot = grads[node.0].get_or_insert_with(|| NodeGrad::Rows {
        cols,
        rows: BTreeMap::new(),
    });
    match slot {
        NodeGrad::Rows { rows, .. } => {
            let dst = rows.entry(row).or_insert_with(|| vec![0.0; cols]);
            dst.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
        NodeGrad::Dense(a) => {
            a[row * cols..(row + 1) * cols]
                .iter_mut()
                .zip(g)
                .for_each(|(x, y)| *x += y);
        }
    }
}

/// Loss gradients with respect to the parameters reached by a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, NodeGrad>,
}

impl Gradients {
    fn add(&mut self, id: ParamId, grad: NodeGrad) {
        match self.grads.get_mut(&id) {
            // a parameter has exactly one node per graph, so this only
            // happens when merging gradients from separate graphs
            Some(existing) => {
                let len = match &grad {
                    NodeGrad::Dense(g) => g.len(),
                    NodeGrad::Rows { .. } => match existing {
                        NodeGrad::Dense(g) => g.len(),
                        NodeGrad::Rows { .. } => 0,
                    },
                };
                existing.add(grad, len)
            }
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    /// Dense gradient of one parameter (zeros if it was not reached).
    pub fn dense(&self, params: &ParamSet, id: ParamId) -> Vec<f64> {
        let len = params.value(id).len();
        match self.grads.get(&id) {
            Some(g) => g.clone().into_dense(len),
            None => vec![0.0; len],
        }
    }

    /// Adds into the parameters' gradient buffers.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (id, grad) in &self.grads {
            let dst = &mut params.params[id.0].grad;
            match grad {
                NodeGrad::Dense(g) => dst.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                NodeGrad::Rows { cols, rows } => {
                    for (r, row) in rows {
                        dst[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
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

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sqrt(Σ (uᵢ − vᵢ)²)`.
pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Maximum relative error between analytic gradients and central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, over every coordinate of every
/// parameter. Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// `build` must construct the same scalar loss each time it is called.
pub fn grad_check<F>(build: F, params: &mut ParamSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("grad_check eps must be positive, got {eps}")));
    }
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        let grads = g.backward(loss)?;
        params.ids().map(|id| grads.dense(params, id)).collect()
    };
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    for (pi, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        for (k, &a) in analytic[pi].iter().enumerate() {
            let orig = params.value(id).values()[k];
            params.value_mut(id).values_mut()[k] = orig + eps;
            let plus = eval(params)?;
            params.value_mut(id).values_mut()[k] = orig - eps;
            let minus = eval(params)?;
            params.value_mut(id).values_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
