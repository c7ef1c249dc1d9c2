use std::sync::atomic::{AtomicU64, Ordering};

use super::{Array, Gradients, ParamStore};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// The primitive operations a [`Graph`] can record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Elementwise sum of two same-shaped arrays.
    Add,
    /// Elementwise product of two same-shaped arrays.
    Multiply,
    /// `(m, k) x (k, n) -> (m, n)`.
    MatMul,
    /// Joins same-rank arrays along `axis`; all other extents must agree.
    Concat { axis: usize },
    /// Selects row `row` of a `(rows, d)` table as a `(1, d)` array.
    Embedding { row: usize },
    Tanh,
    Sigmoid,
    /// Softmax over the last axis, independently per row.
    Softmax,
    /// Natural log; inputs must be strictly positive.
    Log,
    /// Selects the element at a flat index as a scalar.
    Pick { index: usize },
    /// Sum of all elements as a scalar.
    Sum,
    /// Multiplication by a constant.
    Scale(f64),
    /// Swaps the two axes of a matrix.
    Transpose,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Multiply => "multiply",
            Primitive::MatMul => "matrix-multiply",
            Primitive::Concat { .. } => "concatenate",
            Primitive::Embedding { .. } => "embedding-lookup",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::Log => "log",
            Primitive::Pick { .. } => "pick-index",
            Primitive::Sum => "sum",
            Primitive::Scale(_) => "scalar-scale",
            Primitive::Transpose => "transpose",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add | Primitive::Multiply | Primitive::MatMul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Handle to a node inside one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn graph_id(&self) -> u64 {
        self.graph
    }
}

#[derive(Debug)]
enum Source {
    Input,
    Param(usize),
    Op { prim: Primitive, inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    source: Source,
    // `None` for parameter leaves, which read from the bound store.
    value: Option<Array>,
}

/// A define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the node list is always a valid
/// topological order. A graph may borrow a [`ParamStore`]; parameter leaves read
/// their values from it and [`Graph::backward`] reports gradients in its layout.
#[derive(Debug)]
pub struct Graph<'p> {
    id: u64,
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            param_nodes: vec![None; store.len()],
            ..Self::new()
        }
    }

    /// True when the bound store has the same parameter layout as `store`
    /// (the same store, or a clone or perturbed copy of it).
    pub fn has_layout_of(&self, store: &ParamStore) -> bool {
        self.store.is_some_and(|s| s.same_layout(store))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, source: Source, value: Option<Array>) -> NodeId {
        self.nodes.push(Node { source, value });
        NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, node: NodeId) -> Result<usize> {
        if node.graph != self.id || node.index >= self.nodes.len() {
            return Err(Error::ForeignNode(node.index));
        }
        Ok(node.index)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Array) -> NodeId {
        self.push(Source::Input, Some(value))
    }

    /// The leaf for parameter `index` of the bound store. Repeated calls return
    /// the same node.
    pub fn param_at(&mut self, index: usize) -> Result<NodeId> {
        let store = self.store.ok_or(Error::UnboundParams)?;
        if index >= store.len() {
            return Err(Error::UnknownParam(format!("#{index}")));
        }
        if let Some(existing) = self.param_nodes[index] {
            return Ok(NodeId {
                graph: self.id,
                index: existing,
            });
        }
        let id = self.push(Source::Param(index), None);
        self.param_nodes[index] = Some(id.index);
        Ok(id)
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let store = self.store.ok_or(Error::UnboundParams)?;
        let index = store.index_of(name)?;
        self.param_at(index)
    }

    fn value_at(&self, index: usize) -> &Array {
        let node = &self.nodes[index];
        match (&node.value, &node.source) {
            (Some(v), _) => v,
            (None, Source::Param(p)) => self
                .store
                .expect("parameter leaf without a bound store")
                .by_index(*p),
            (None, _) => unreachable!("operation node without a value"),
        }
    }

    /// The forward value of `node`.
    ///
    /// # Panics
    ///
    /// If `node` belongs to another graph.
    pub fn value(&self, node: NodeId) -> &Array {
        let index = self.check(node).expect("node from a different graph");
        self.value_at(index)
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, node: NodeId) -> f64 {
        self.value(node).data()[0]
    }

    /// Records `prim` applied to `inputs` and computes its forward value.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let indices = inputs
            .iter()
            .map(|&n| self.check(n))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Array> = indices.iter().map(|&i| self.value_at(i)).collect();
        let shape_error = || Error::Shape {
            kind: prim.name(),
            shapes: values.iter().map(|v| v.shape().to_vec()).collect(),
        };
        if let Some(n) = prim.arity() {
            if values.len() != n {
                return Err(shape_error());
            }
        } else if values.is_empty() {
            return Err(shape_error());
        }
        let out = forward(prim, &values).ok_or_else(shape_error)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(prim.name().to_string()));
        }
        Ok(self.push(
            Source::Op {
                prim,
                inputs: indices,
            },
            Some(out),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Multiply, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn embedding(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        self.apply(Primitive::Embedding { row }, &[table])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        self.apply(Primitive::Pick { index }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale(factor), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Transpose, &[a])
    }

    /// `a - b`, built from `add` and `scalar-scale`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    /// Sum of several same-shaped nodes, folded left to right.
    pub fn add_all(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = parts
            .split_first()
            .ok_or(Error::EmptySequence("add_all needs at least one term"))?;
        rest.iter().try_fold(first, |acc, &n| self.add(acc, n))
    }

    /// Propagates adjoints from a scalar `root` back to every node.
    pub fn adjoints(&self, root: NodeId) -> Result<Adjoints> {
        let root_index = self.check(root)?;
        let root_value = self.value_at(root_index);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root_index] = Some(vec![1.0]);
        for index in (0..=root_index).rev() {
            let Some(grad) = adj[index].take() else {
                continue;
            };
            if let Source::Op { prim, inputs } = &self.nodes[index].source {
                let values: Vec<&Array> = inputs.iter().map(|&i| self.value_at(i)).collect();
                let out = self.value_at(index);
                let input_grads = backward_rule(*prim, &values, out, &grad);
                for (&input, g) in inputs.iter().zip(input_grads) {
                    accumulate(&mut adj[input], g);
                }
            }
            adj[index] = Some(grad);
        }
        Ok(Adjoints { adj })
    }

    /// Reverse-mode gradient of a scalar `root` with respect to every parameter of
    /// the bound store. Parameters the root does not depend on get zero gradient.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let store = self.store.ok_or(Error::UnboundParams)?;
        let mut adjoints = self.adjoints(root)?;
        let mut grads = store.zero_gradients();
        for (param, slot) in self.param_nodes.iter().enumerate() {
            if let Some(node) = slot {
                if let Some(g) = adjoints.adj[*node].take() {
                    grads.arrays_mut()[param].data_mut().copy_from_slice(&g);
                }
            }
        }
        Ok(grads)
    }
}

/// Per-node adjoints produced by [`Graph::adjoints`].
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// The adjoint of `node`, or `None` when the root does not depend on it.
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.adj.get(node.index).and_then(|a| a.as_deref())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (m×n) · bᵀ` for `b` of shape `(k, n)`.
fn matmul_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * k);
    for grow in g.chunks_exact(n).take(m) {
        out.extend(b.chunks_exact(n).map(|brow| grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>()));
    }
    out
}

/// `aᵀ · g` for `a` of shape `(m, k)` and `g` of shape `(m, n)`.
fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn softmax_rows(data: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    out
}

fn concat_layout(shapes: &[&[usize]], axis: usize) -> Option<(Vec<usize>, usize)> {
    let first = shapes[0];
    if axis >= first.len() {
        return None;
    }
    let mut out_shape = first.to_vec();
    out_shape[axis] = 0;
    for s in shapes {
        if s.len() != first.len() {
            return None;
        }
        for (d, (&x, &y)) in s.iter().zip(first).enumerate() {
            if d != axis && x != y {
                return None;
            }
        }
        out_shape[axis] += s[axis];
    }
    let outer = first[..axis].iter().product();
    Some((out_shape, outer))
}

fn forward(prim: Primitive, inputs: &[&Array]) -> Option<Array> {
    let a = inputs[0];
    let map = |f: &dyn Fn(f64) -> f64| Array::from_parts(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect());
    Some(match prim {
        Primitive::Add | Primitive::Multiply => {
            let b = inputs[1];
            if a.shape() != b.shape() {
                return None;
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| if prim == Primitive::Add { x + y } else { x * y })
                .collect();
            Array::from_parts(a.shape().to_vec(), data)
        }
        Primitive::MatMul => {
            let b = inputs[1];
            let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
                return None;
            };
            if k != k2 {
                return None;
            }
            Array::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Primitive::Concat { axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|x| x.shape()).collect();
            let (out_shape, outer) = concat_layout(&shapes, axis)?;
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for x in inputs {
                    let chunk = x.len() / outer.max(1);
                    data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Array::from_parts(out_shape, data)
        }
        Primitive::Embedding { row } => {
            let &[rows, width] = a.shape() else {
                return None;
            };
            if row >= rows {
                return None;
            }
            Array::from_parts(vec![1, width], a.data()[row * width..(row + 1) * width].to_vec())
        }
        Primitive::Tanh => map(&f64::tanh),
        Primitive::Sigmoid => map(&|v| 1.0 / (1.0 + (-v).exp())),
        Primitive::Softmax => {
            if a.is_empty() {
                return None;
            }
            Array::from_parts(a.shape().to_vec(), softmax_rows(a.data(), a.last_dim()))
        }
        Primitive::Log => map(&f64::ln),
        Primitive::Pick { index } => Array::from_parts(Vec::new(), vec![*a.data().get(index)?]),
        Primitive::Sum => Array::from_parts(Vec::new(), vec![a.data().iter().sum()]),
        Primitive::Scale(c) => map(&|v| c * v),
        Primitive::Transpose => {
            let &[rows, cols] = a.shape() else {
                return None;
            };
            Array::from_parts(vec![cols, rows], transpose_raw(a.data(), rows, cols))
        }
    })
}

fn backward_rule(prim: Primitive, inputs: &[&Array], out: &Array, g: &[f64]) -> Vec<Vec<f64>> {
    let a = inputs[0];
    match prim {
        Primitive::Add => vec![g.to_vec(), g.to_vec()],
        Primitive::Multiply => {
            let b = inputs[1];
            let ga = g.iter().zip(b.data()).map(|(g, y)| g * y).collect();
            let gb = g.iter().zip(a.data()).map(|(g, x)| g * x).collect();
            vec![ga, gb]
        }
        Primitive::MatMul => {
            let b = inputs[1];
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            vec![matmul_bt(g, b.data(), m, n, k), matmul_at(a.data(), g, m, k, n)]
        }
        Primitive::Concat { axis } => {
            let outer: usize = a.shape()[..axis].iter().product();
            let mut grads: Vec<Vec<f64>> = inputs.iter().map(|x| Vec::with_capacity(x.len())).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (x, gx) in inputs.iter().zip(grads.iter_mut()) {
                    let chunk = x.len() / outer;
                    gx.extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            grads
        }
        Primitive::Embedding { row } => {
            let width = a.shape()[1];
            let mut ga = vec![0.0; a.len()];
            ga[row * width..(row + 1) * width].copy_from_slice(g);
            vec![ga]
        }
        Primitive::Tanh => vec![g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect()],
        Primitive::Sigmoid => vec![g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect()],
        Primitive::Softmax => {
            let width = out.last_dim();
            let mut ga = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(width).zip(out.data().chunks(width)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                ga.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
            }
            vec![ga]
        }
        Primitive::Log => vec![g.iter().zip(a.data()).map(|(g, x)| g / x).collect()],
        Primitive::Pick { index } => {
            let mut ga = vec![0.0; a.len()];
            ga[index] = g[0];
            vec![ga]
        }
        Primitive::Sum => vec![vec![g[0]; a.len()]],
        Primitive::Scale(c) => vec![g.iter().map(|v| c * v).collect()],
        Primitive::Transpose => {
            let (rows, cols) = (a.shape()[0], a.shape()[1]);
            vec![transpose_raw(g, cols, rows)]
        }
    }
}
