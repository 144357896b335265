//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Var::backward`] on a scalar walks the tape in reverse and returns the
//! vector-Jacobian products for every node that depends on a parameter.
//!
//! Tensors are row-major and at most two-dimensional; a shape of `[]` is a
//! scalar.

use std::cell::{Ref, RefCell};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::Contract(format!(
                "tensors are at most 2-D, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix view: `[n]` is one row, `[]` a 1x1.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> S {
        self.data[row * self.cols() + col]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Transposed copy of a matrix (vectors become columns).
    pub fn transposed(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a^T b` for `a: [k, m]`, `b: [k, n]`.
fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a b^T` for `a: [m, k]`, `b: [n, k]`.
fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn clamp_denominator<S: Scalar>(d: S) -> (S, bool) {
    if d.abs() < S::eps() {
        let sign = if d < S::zero() { -S::one() } else { S::one() };
        (sign * S::eps(), true)
    } else {
        (d, false)
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Sum,
    Mean,
    Exp,
    Log { clamped: bool },
    Sqrt,
    Square,
    Relu,
    Tanh,
    SoftmaxRows,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    MaskedSelect { indices: Vec<usize> },
    AddRow,
    Scale(S),
    AddScalar,
    Broadcast,
    SumRows,
    SumCols,
    Reshape,
}

struct Node<S> {
    op: Op<S>,
    inputs: Vec<usize>,
    value: Tensor<S>,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Node ids are indices into the record, so every input id precedes the
/// node that references it.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(1024)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op<S>, inputs: Vec<usize>, value: Tensor<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|&i| nodes[i].needs_grad);
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// Trainable leaf: gradients are tracked through it.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            needs_grad: true,
        });
        Var { tape: self, id }
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            needs_grad: false,
        });
        Var { tape: self, id }
    }

    pub fn scalar(&self, value: S) -> Var<'_, S> {
        self.constant(Tensor::scalar(value))
    }

    /// Concatenates along `axis` (0 = rows, 1 = columns). Vectors concatenate
    /// end to end on axis 0.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let nodes = self.nodes.borrow();
        let first = &nodes[parts[0].id].value;
        let (value, ids) = if first.shape.len() <= 1 {
            if axis != 0 {
                return Err(Error::Contract("vectors concatenate on axis 0".into()));
            }
            let mut data = Vec::new();
            for p in parts {
                let v = &nodes[p.id].value;
                if v.shape.len() > 1 {
                    return Err(Error::shape("concat", &first.shape, &v.shape));
                }
                data.extend_from_slice(&v.data);
            }
            (Tensor::vector(data), parts.iter().map(|p| p.id).collect())
        } else {
            let (mut rows, mut cols) = (first.shape[0], first.shape[1]);
            for p in &parts[1..] {
                let v = &nodes[p.id].value;
                let ok = v.shape.len() == 2
                    && match axis {
                        0 => v.shape[1] == cols,
                        _ => v.shape[0] == rows,
                    };
                if !ok {
                    return Err(Error::shape("concat", &first.shape, &v.shape));
                }
                match axis {
                    0 => rows += v.shape[0],
                    _ => cols += v.shape[1],
                }
            }
            let mut data = Vec::with_capacity(rows * cols);
            if axis == 0 {
                for p in parts {
                    data.extend_from_slice(&nodes[p.id].value.data);
                }
            } else {
                for r in 0..rows {
                    for p in parts {
                        let v = &nodes[p.id].value;
                        let c = v.shape[1];
                        data.extend_from_slice(&v.data[r * c..(r + 1) * c]);
                    }
                }
            }
            (
                Tensor {
                    shape: vec![rows, cols],
                    data,
                },
                parts.iter().map(|p| p.id).collect(),
            )
        };
        drop(nodes);
        Ok(self.push(Op::Concat { axis }, ids, value))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn item(&self) -> S {
        self.value().data[0]
    }

    fn unary(&self, op: Op<S>, f: impl Fn(&Tensor<S>) -> Tensor<S>) -> Var<'t, S> {
        let value = f(&self.value());
        self.tape.push(op, vec![self.id], value)
    }

    fn same_shape(
        &self,
        other: &Var<'t, S>,
        op: Op<S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var<'t, S>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape != b.shape {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            a.zip(&b, f)
        };
        Ok(self.tape.push(op, vec![self.id, other.id], value))
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, Op::Mul, "mul", |a, b| a * b)
    }

    /// Elementwise division; denominators are clamped away from zero by 1e-12.
    pub fn div(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, Op::Div, "div", |a, b| a / clamp_denominator(b).0)
    }

    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::shape("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            Tensor {
                shape: vec![m, n],
                data: matmul_raw(&a.data, &b.data, m, k, n),
            }
        };
        Ok(self.tape.push(Op::MatMul, vec![self.id, other.id], value))
    }

    pub fn transpose(&self) -> Var<'t, S> {
        self.unary(Op::Transpose, Tensor::transposed)
    }

    pub fn sum(&self) -> Var<'t, S> {
        self.unary(Op::Sum, |t| Tensor::scalar(t.data.iter().copied().sum()))
    }

    pub fn mean(&self) -> Result<Var<'t, S>> {
        if self.value().numel() == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        Ok(self.unary(Op::Mean, |t| {
            let n = S::from_usize(t.numel()).unwrap();
            Tensor::scalar(t.data.iter().copied().sum::<S>() / n)
        }))
    }

    pub fn exp(&self) -> Var<'t, S> {
        self.unary(Op::Exp, |t| t.map(S::exp))
    }

    /// Natural log; errors on nonpositive entries.
    pub fn log(&self) -> Result<Var<'t, S>> {
        if let Some(bad) = self.value().data.iter().find(|&&x| x <= S::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive input {bad}"),
            });
        }
        Ok(self.unary(Op::Log { clamped: false }, |t| t.map(S::ln)))
    }

    /// Natural log of `max(x, 1e-12)`.
    pub fn log_clamped(&self) -> Var<'t, S> {
        self.unary(Op::Log { clamped: true }, |t| t.map(|x| x.max(S::eps()).ln()))
    }

    /// Square root; zero is allowed and gets a zero subgradient.
    pub fn sqrt(&self) -> Result<Var<'t, S>> {
        if let Some(bad) = self.value().data.iter().find(|&&x| x < S::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(Op::Sqrt, |t| t.map(S::sqrt)))
    }

    pub fn square(&self) -> Var<'t, S> {
        self.unary(Op::Square, |t| t.map(|x| x * x))
    }

    pub fn relu(&self) -> Var<'t, S> {
        self.unary(Op::Relu, |t| t.map(|x| x.max(S::zero())))
    }

    pub fn tanh(&self) -> Var<'t, S> {
        self.unary(Op::Tanh, |t| t.map(S::tanh))
    }

    /// Row-wise softmax. Entries of `-inf` get zero weight; each row needs at
    /// least one finite entry.
    pub fn softmax_rows(&self) -> Var<'t, S> {
        self.unary(Op::SoftmaxRows, |t| {
            let cols = t.cols();
            let mut data = t.data.clone();
            for row in data.chunks_mut(cols.max(1)) {
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total = total + *x;
                }
                for x in row.iter_mut() {
                    *x = *x / total;
                }
            }
            Tensor {
                shape: t.shape.clone(),
                data,
            }
        })
    }

    /// `len` entries starting at `start` along `axis` (0 = rows, 1 = cols).
    /// Vectors slice on axis 0.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, S>> {
        let value = {
            let t = self.value();
            match (t.shape.len(), axis) {
                (1, 0) if start + len <= t.shape[0] => {
                    Tensor::vector(t.data[start..start + len].to_vec())
                }
                (2, 0) if start + len <= t.shape[0] => {
                    let c = t.shape[1];
                    Tensor {
                        shape: vec![len, c],
                        data: t.data[start * c..(start + len) * c].to_vec(),
                    }
                }
                (2, 1) if start + len <= t.shape[1] => {
                    let (r, c) = (t.shape[0], t.shape[1]);
                    let mut data = Vec::with_capacity(r * len);
                    for i in 0..r {
                        data.extend_from_slice(&t.data[i * c + start..i * c + start + len]);
                    }
                    Tensor {
                        shape: vec![r, len],
                        data,
                    }
                }
                _ => {
                    return Err(Error::shape("slice", &t.shape, &[axis, start, len]));
                }
            }
        };
        Ok(self.tape.push(Op::Slice { axis, start }, vec![self.id], value))
    }

    /// Entries where `mask` is true, flattened row-major into a vector.
    pub fn masked_select(&self, mask: &[bool]) -> Result<Var<'t, S>> {
        let (value, indices) = {
            let t = self.value();
            if mask.len() != t.numel() {
                return Err(Error::shape("masked_select", &t.shape, &[mask.len()]));
            }
            let indices: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect();
            let data = indices.iter().map(|&i| t.data[i]).collect();
            (Tensor::vector(data), indices)
        };
        Ok(self
            .tape
            .push(Op::MaskedSelect { indices }, vec![self.id], value))
    }

    /// Matrix `[m, n]` plus a row `[n]` or `[1, n]` broadcast over rows.
    pub fn add_row(&self, row: &Var<'t, S>) -> Result<Var<'t, S>> {
        let value = {
            let a = self.value();
            let b = row.value();
            if a.shape.len() != 2 || b.numel() != a.shape[1] || b.rows() != 1 {
                return Err(Error::shape("add_row", &a.shape, &b.shape));
            }
            let n = a.shape[1];
            let mut data = a.data.clone();
            for chunk in data.chunks_mut(n) {
                for (x, &y) in chunk.iter_mut().zip(&b.data) {
                    *x = *x + y;
                }
            }
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        };
        Ok(self.tape.push(Op::AddRow, vec![self.id, row.id], value))
    }

    pub fn scale(&self, factor: S) -> Var<'t, S> {
        self.unary(Op::Scale(factor), |t| t.map(|x| x * factor))
    }

    pub fn add_scalar(&self, offset: S) -> Var<'t, S> {
        self.unary(Op::AddScalar, |t| t.map(|x| x + offset))
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn broadcast(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        let value = {
            let t = self.value();
            if t.numel() != 1 {
                return Err(Error::shape("broadcast", &t.shape, shape));
            }
            Tensor::full(shape, t.data[0])
        };
        Ok(self.tape.push(Op::Broadcast, vec![self.id], value))
    }

    /// Sums each row of a matrix: `[m, n] -> [m, 1]`.
    pub fn sum_rows(&self) -> Var<'t, S> {
        self.unary(Op::SumRows, |t| {
            let (r, c) = (t.rows(), t.cols());
            let data = (0..r)
                .map(|i| t.data[i * c..(i + 1) * c].iter().copied().sum())
                .collect();
            Tensor {
                shape: vec![r, 1],
                data,
            }
        })
    }

    /// Sums each column of a matrix: `[m, n] -> [1, n]`.
    pub fn sum_cols(&self) -> Var<'t, S> {
        self.unary(Op::SumCols, |t| {
            let (r, c) = (t.rows(), t.cols());
            let mut data = vec![S::zero(); c];
            for i in 0..r {
                for (acc, &x) in data.iter_mut().zip(&t.data[i * c..(i + 1) * c]) {
                    *acc = *acc + x;
                }
            }
            Tensor {
                shape: vec![1, c],
                data,
            }
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        let value = {
            let t = self.value();
            Tensor::new(shape, t.data.clone())
                .map_err(|_| Error::shape("reshape", &t.shape, shape))?
        };
        Ok(self.tape.push(Op::Reshape, vec![self.id], value))
    }

    /// Reverse pass from this scalar. Gradients are returned for every node
    /// that depends on a [`Tape::param`] leaf.
    pub fn backward(&self) -> Result<Gradients<S>> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![S::one()]);

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = vjp(node, &nodes, &g);
            grads[id] = Some(g);
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !nodes[*input].needs_grad {
                    continue;
                }
                match &mut grads[*input] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&c) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(c),
                }
            }
        }

        let shapes = nodes[..=self.id]
            .iter()
            .map(|n| n.value.shape.clone())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Vector-Jacobian products of one node for each of its inputs.
fn vjp<S: Scalar>(node: &Node<S>, nodes: &[Node<S>], g: &[S]) -> Vec<Option<Vec<S>>> {
    let input = |k: usize| &nodes[node.inputs[k]].value;
    let y = &node.value;
    let wants = |k: usize| nodes[node.inputs[k]].needs_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())],
        Op::Mul => {
            let (a, b) = (input(0), input(1));
            vec![
                wants(0).then(|| g.iter().zip(&b.data).map(|(&g, &b)| g * b).collect()),
                wants(1).then(|| g.iter().zip(&a.data).map(|(&g, &a)| g * a).collect()),
            ]
        }
        Op::Div => {
            let (a, b) = (input(0), input(1));
            let ga = g
                .iter()
                .zip(&b.data)
                .map(|(&g, &b)| g / clamp_denominator(b).0)
                .collect();
            let gb = g
                .iter()
                .zip(a.data.iter().zip(&b.data))
                .map(|(&g, (&a, &b))| {
                    let (d, clamped) = clamp_denominator(b);
                    if clamped {
                        S::zero()
                    } else {
                        -g * a / (d * d)
                    }
                })
                .collect();
            vec![Some(ga), wants(1).then_some(gb)]
        }
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            vec![
                wants(0).then(|| matmul_nt(g, &b.data, m, n, k)),
                wants(1).then(|| matmul_tn(&a.data, g, m, k, n)),
            ]
        }
        Op::Transpose => {
            // y is [c, r]; the gradient is g transposed back to [r, c].
            let (r, c) = (y.shape[0], y.shape[1]);
            let mut out = vec![S::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = g[i * c + j];
                }
            }
            vec![Some(out)]
        }
        Op::Sum => vec![Some(vec![g[0]; input(0).numel()])],
        Op::Mean => {
            let n = input(0).numel();
            vec![Some(vec![g[0] / S::from_usize(n).unwrap(); n])]
        }
        Op::Exp => vec![Some(g.iter().zip(&y.data).map(|(&g, &y)| g * y).collect())],
        Op::Log { clamped } => {
            let x = input(0);
            vec![Some(
                g.iter()
                    .zip(&x.data)
                    .map(|(&g, &x)| {
                        if *clamped && x < S::eps() {
                            S::zero()
                        } else {
                            g / x
                        }
                    })
                    .collect(),
            )]
        }
        Op::Sqrt => vec![Some(
            g.iter()
                .zip(&y.data)
                .map(|(&g, &y)| {
                    if y > S::zero() {
                        g / (y + y)
                    } else {
                        S::zero()
                    }
                })
                .collect(),
        )],
        Op::Square => {
            let x = input(0);
            vec![Some(
                g.iter()
                    .zip(&x.data)
                    .map(|(&g, &x)| g * (x + x))
                    .collect(),
            )]
        }
        Op::Relu => {
            let x = input(0);
            vec![Some(
                g.iter()
                    .zip(&x.data)
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect(),
            )]
        }
        Op::Tanh => vec![Some(
            g.iter()
                .zip(&y.data)
                .map(|(&g, &y)| g * (S::one() - y * y))
                .collect(),
        )],
        Op::SoftmaxRows => {
            let cols = y.cols().max(1);
            let mut out = vec![S::zero(); g.len()];
            for ((orow, grow), yrow) in out
                .chunks_mut(cols)
                .zip(g.chunks(cols))
                .zip(y.data.chunks(cols))
            {
                let dot: S = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for ((o, &g), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = y * (g - dot);
                }
            }
            vec![Some(out)]
        }
        Op::Concat { axis } => {
            let mut out = Vec::with_capacity(node.inputs.len());
            if y.shape.len() <= 1 || *axis == 0 {
                let mut offset = 0;
                for k in 0..node.inputs.len() {
                    let n = input(k).numel();
                    out.push(Some(g[offset..offset + n].to_vec()));
                    offset += n;
                }
            } else {
                let total_cols = y.shape[1];
                let rows = y.shape[0];
                let mut col_offset = 0;
                for k in 0..node.inputs.len() {
                    let c = input(k).shape[1];
                    let mut part = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        let base = r * total_cols + col_offset;
                        part.extend_from_slice(&g[base..base + c]);
                    }
                    out.push(Some(part));
                    col_offset += c;
                }
            }
            out
        }
        Op::Slice { axis, start } => {
            let x = input(0);
            let mut out = vec![S::zero(); x.numel()];
            match (x.shape.len(), axis) {
                (2, 1) => {
                    let (r, c) = (x.shape[0], x.shape[1]);
                    let len = y.shape[1];
                    for i in 0..r {
                        out[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                }
                _ => {
                    let offset = if x.shape.len() == 2 {
                        start * x.shape[1]
                    } else {
                        *start
                    };
                    out[offset..offset + g.len()].copy_from_slice(g);
                }
            }
            vec![Some(out)]
        }
        Op::MaskedSelect { indices } => {
            let mut out = vec![S::zero(); input(0).numel()];
            for (&i, &gv) in indices.iter().zip(g) {
                out[i] = gv;
            }
            vec![Some(out)]
        }
        Op::AddRow => {
            let n = y.cols();
            let mut gb = vec![S::zero(); n];
            for chunk in g.chunks(n) {
                for (acc, &x) in gb.iter_mut().zip(chunk) {
                    *acc = *acc + x;
                }
            }
            vec![Some(g.to_vec()), wants(1).then_some(gb)]
        }
        Op::Scale(factor) => vec![Some(g.iter().map(|&x| x * *factor).collect())],
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::Broadcast => vec![Some(vec![g.iter().copied().sum()])],
        Op::SumRows => {
            let c = input(0).cols();
            let mut out = Vec::with_capacity(g.len() * c);
            for &gv in g {
                out.extend(std::iter::repeat_n(gv, c));
            }
            vec![Some(out)]
        }
        Op::SumCols => {
            let x = input(0);
            let mut out = Vec::with_capacity(x.numel());
            for _ in 0..x.rows() {
                out.extend_from_slice(g);
            }
            vec![Some(out)]
        }
    }
}

/// Gradients produced by [`Var::backward`], indexed by node id.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_, S>) -> Tensor<S> {
        self.by_id(var.id)
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    /// Gradient for a node id, if one reached it.
    pub fn by_id(&self, id: usize) -> Option<Tensor<S>> {
        let data = self.grads.get(id)?.as_ref()?.clone();
        Some(Tensor {
            shape: self.shapes[id].clone(),
            data,
        })
    }
}

/// Draws `mean + std * z` with `z` standard normal from `rng`.
///
/// The result is a plain tensor: nothing flows back into `mean` or `std`.
pub fn gaussian_sample<S: Scalar, R: Rng + ?Sized>(
    mean: &Tensor<S>,
    std: &Tensor<S>,
    rng: &mut R,
) -> Result<Tensor<S>> {
    if mean.shape != std.shape {
        return Err(Error::shape("gaussian_sample", &mean.shape, &std.shape));
    }
    if let Some(bad) = std.data.iter().find(|&&s| s < S::zero()) {
        return Err(Error::Domain {
            op: "gaussian_sample",
            detail: format!("negative standard deviation {bad}"),
        });
    }
    let data = mean
        .data
        .iter()
        .zip(&std.data)
        .map(|(&m, &s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * S::lit(z)
        })
        .collect();
    Ok(Tensor {
        shape: mean.shape.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_computed() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.constant(t(&[3, 1], &[1., 0., -1.]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), vec![2, 1]);
        assert_eq!(c.value().data(), &[-2., -2.]);
    }

    #[test]
    fn softmax_of_equal_row_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[0.3; 4]));
        let y = x.softmax_rows();
        let v = y.value();
        assert!(v.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((v.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_ignores_negative_infinity() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, f64::NEG_INFINITY, 1.0]));
        let y = x.softmax_rows();
        assert_eq!(y.value().data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.square();
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(&x).item(), 6.0);
    }

    #[test]
    fn unreachable_parameter_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let p = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let loss = x.exp();
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(&p), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(x.square().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_and_domain_errors() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.; 6]));
        let b = tape.constant(t(&[2, 2], &[0.; 4]));
        match a.matmul(&b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        assert!(matches!(a.add(&b), Err(Error::Shape { .. })));
        let z = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(z.log(), Err(Error::Domain { .. })));
        assert!(z.log_clamped().value().is_finite());
        let neg = tape.constant(t(&[1], &[-1.0]));
        assert!(matches!(neg.sqrt(), Err(Error::Domain { .. })));
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let tape = Tape::new();
        let a = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.param(t(&[2, 1], &[5., 6.]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1., 2., 5., 3., 4., 6.]);
        let s = c.slice(1, 1, 2).unwrap();
        assert_eq!(s.value().data(), &[2., 5., 4., 6.]);
        let loss = s.sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(&a).data(), &[0., 1., 0., 1.]);
        assert_eq!(g.wrt(&b).data(), &[1., 1.]);
    }

    #[test]
    fn masked_select_scatters_gradient() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let s = x.masked_select(&[true, false, false, true]).unwrap();
        assert_eq!(s.value().data(), &[1., 4.]);
        let g = s.square().sum().backward().unwrap();
        assert_eq!(g.wrt(&x).data(), &[2., 0., 0., 8.]);
    }

    #[test]
    fn gaussian_sample_contract() {
        let mean = t(&[3], &[1.0, -2.0, 0.5]);
        let zero = Tensor::zeros(&[3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(gaussian_sample(&mean, &zero, &mut rng).unwrap(), mean);

        let std = t(&[3], &[1.0, 2.0, 0.1]);
        let a = gaussian_sample(&mean, &std, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gaussian_sample(&mean, &std, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let bad = t(&[3], &[1.0, -0.1, 0.0]);
        assert!(matches!(
            gaussian_sample(&mean, &bad, &mut rng),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn gaussian_sample_moments() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let s = gaussian_sample(&Tensor::zeros(&[n]), &Tensor::full(&[n], 1.0), &mut rng).unwrap();
        let mean = s.data().iter().sum::<f64>() / n as f64;
        let var = s.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }
}
