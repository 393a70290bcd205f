//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node. Leaves are created with
//! [`Graph::param`] (tracked) or [`Graph::constant`] (not tracked); every
//! other node tracks gradients iff one of its inputs does. Calling
//! [`Graph::backward`] on a scalar node propagates adjoints to all tracked
//! nodes.
//!
//! Forward values that turn non-finite are remembered by op name; the first
//! offender is reported by [`Graph::check_finite`] and by `backward`.

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};
use crate::numerics::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op maps onto the left operand's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, f64),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    LogAddExp(Var, Var),
    Lgamma(Var),
    Digamma(Var),
    LogSoftmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Pick { input: Var, targets: Vec<usize>, weights: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    SqDist(Var, Var),
    Elementwise { inputs: Vec<Var>, partials: Vec<Vec<f64>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Clamp(..) => "clamp",
            Op::LogAddExp(..) => "logaddexp",
            Op::Lgamma(..) => "lgamma",
            Op::Digamma(..) => "digamma",
            Op::LogSoftmax(..) => "log_softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Pick { .. } => "pick",
            Op::Embedding { .. } => "embedding",
            Op::SqDist(..) => "sq_dist",
            Op::Elementwise { .. } => "elementwise",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A single-owner computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_nonfinite: Option<String>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient with respect to `v`; all zeros for untracked or unreached nodes.
    pub fn get(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("gradient shape matches node"),
            None => Tensor::zeros(r, c),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(r, c, g).expect("gradient shape matches node"),
            None => Tensor::zeros(r, c),
        }
    }
}

fn bcast(op: &str, lhs: [usize; 2], rhs: [usize; 2]) -> Result<Bcast> {
    if lhs == rhs {
        Ok(Bcast::Same)
    } else if rhs == [1, 1] {
        Ok(Bcast::Scalar)
    } else if rhs[0] == 1 && rhs[1] == lhs[1] {
        Ok(Bcast::Row)
    } else if rhs[1] == 1 && rhs[0] == lhs[0] {
        Ok(Bcast::Col)
    } else {
        Err(Error::contract(format!(
            "{op}: cannot broadcast {}x{} onto {}x{}",
            rhs[0], rhs[1], lhs[0], lhs[1]
        )))
    }
}

#[inline]
fn bcast_index(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
        Bcast::Scalar => 0,
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(format!("{} (node {})", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf whose gradient is computed.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copies `v`'s current value into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// Fails with the identity of the first op whose output was not finite.
    pub fn check_finite(&self) -> Result<()> {
        match &self.first_nonfinite {
            Some(op) => Err(Error::numeric(format!("non-finite value produced by {op}"))),
            None => Ok(()),
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let sa = self.shape(a);
        let kind = bcast(name, sa, self.shape(b))?;
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let cols = sa[1];
        let data = av.iter().enumerate().map(|(i, &x)| f(x, bv[bcast_index(kind, i, cols)])).collect();
        Ok((Tensor::new(sa[0], sa[1], data)?, kind))
    }

    /// `a + b`, broadcasting `b` over rows, columns or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary(a, b, "add", |x, y| x + y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b, kind), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary(a, b, "sub", |x, y| x - y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b, kind), tracked))
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary(a, b, "mul", |x, y| x * y)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b, kind), tracked))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.nodes[a.0].value.map(|x| scale * x + shift);
        let tracked = self.tracked(a);
        self.push(value, Op::Affine(a, scale), tracked)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, k] = self.shape(a);
        let [k2, m] = self.shape(b);
        if k != k2 {
            return Err(Error::contract(format!("matmul: {n}x{k} times {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), &mut out, n, k, m);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(n, m, out)?, Op::MatMul(a, b), tracked))
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let rows = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if r != rows {
                return Err(Error::contract(format!("concat: row counts {rows} and {r} differ")));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::Concat(parts.to_vec()), tracked))
    }

    /// Columns `start..end` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if start >= end || end > cols {
            return Err(Error::contract(format!("slice {start}..{end} of {cols} columns")));
        }
        let src = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::new(rows, end - start, data)?, Op::Slice(a, start), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, move |x| if x >= 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, move |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `ln(exp(a) + exp(b))` without overflow.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract("log_add_exp operands must have equal shapes"));
        }
        let (value, _) = self.binary(a, b, "log_add_exp", log_add_exp)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::LogAddExp(a, b), tracked))
    }

    /// Elementwise ln Γ; inputs must be positive.
    pub fn lgamma(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { ln_gamma_unchecked(x) } else { f64::NAN }, Op::Lgamma(a))
    }

    /// Elementwise ψ; inputs must be positive.
    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { digamma_unchecked(x) } else { f64::NAN }, Op::Digamma(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let cols = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for i in 0..t.rows() {
            let row = t.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(t.rows(), cols, data).expect("same shape");
        let tracked = self.tracked(a);
        self.push(value, Op::LogSoftmax(a), tracked)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[targets_i])`, a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        let [rows, cols] = t.shape();
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::contract(format!(
                "cross entropy: {rows} rows but {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut loss = 0.0;
        for i in 0..rows {
            if targets[i] >= cols {
                return Err(Error::contract(format!("target {} out of range for {cols} classes", targets[i])));
            }
            let row = t.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + z.ln();
            probs.extend(row.iter().map(|x| (x - lse).exp()));
            if weights[i] != 0.0 {
                loss -= weights[i] * (row[targets[i]] - lse);
            }
        }
        let tracked = self.tracked(logits);
        let op = Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, tracked))
    }

    /// `Σ_i w_i · a[i, targets_i]`, a scalar.
    pub fn pick(&mut self, a: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let [rows, cols] = t.shape();
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::contract("pick: targets and weights must match row count"));
        }
        let mut total = 0.0;
        for i in 0..rows {
            if targets[i] >= cols {
                return Err(Error::contract(format!("pick target {} out of range for {cols} columns", targets[i])));
            }
            if weights[i] != 0.0 {
                total += weights[i] * t.get(i, targets[i]);
            }
        }
        let tracked = self.tracked(a);
        let op = Op::Pick { input: a, targets: targets.to_vec(), weights: weights.to_vec() };
        Ok(self.push(Tensor::scalar(total), op, tracked))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        let [vocab, dim] = t.shape();
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup of no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::contract(format!("token id {id} out of range for vocabulary of {vocab}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let tracked = self.tracked(table);
        Ok(self.push(Tensor::new(ids.len(), dim, data)?, Op::Embedding { table, ids: ids.to_vec() }, tracked))
    }

    /// Pairwise squared Euclidean distances between rows of `a` and rows of `b`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.cols() != tb.cols() {
            return Err(Error::contract(format!("sq_dist: {} vs {} columns", ta.cols(), tb.cols())));
        }
        let (n, m) = (ta.rows(), tb.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = ta.row(i);
            for j in 0..m {
                data.push(x.iter().zip(tb.row(j)).map(|(p, q)| (p - q) * (p - q)).sum());
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(n, m, data)?, Op::SqDist(a, b), tracked))
    }

    /// Elementwise node with caller-supplied value and local partial derivatives.
    ///
    /// `partials[k][i]` is `∂value[i] / ∂inputs[k][i]`. Used for samplers whose
    /// gradient comes from implicit differentiation rather than a chain of
    /// primitives.
    pub fn elementwise(&mut self, value: Tensor, inputs: &[Var], partials: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != partials.len() {
            return Err(Error::contract("elementwise: one partial vector per input"));
        }
        for (&v, p) in inputs.iter().zip(&partials) {
            if self.shape(v) != value.shape() || p.len() != value.len() {
                return Err(Error::contract("elementwise: inputs, partials and value must share a shape"));
            }
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(value, Op::Elementwise { inputs: inputs.to_vec(), partials }, tracked))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check_finite()?;
        if self.shape(output) != [1, 1] {
            let [r, c] = self.shape(output);
            return Err(Error::contract(format!("backward needs a scalar output, got {r}x{c}")));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.tracked(output) {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        let want = |v: Var| self.nodes[v.0].tracked;
        let cols = node.value.cols();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if want(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if want(*b) {
                    let gb = accumulate(grads, *b, len(*b));
                    for (i, y) in g.iter().enumerate() {
                        gb[bcast_index(*kind, i, cols)] += sign * y;
                    }
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (val(*a), val(*b));
                if want(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * bv[bcast_index(*kind, i, cols)];
                    }
                }
                if want(*b) {
                    let gb = accumulate(grads, *b, len(*b));
                    for (i, y) in g.iter().enumerate() {
                        gb[bcast_index(*kind, i, cols)] += y * av[i];
                    }
                }
            }
            Op::Affine(a, scale) => {
                if want(*a) {
                    let ga = accumulate(grads, *a, g.len());
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += scale * y;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let [n, k] = self.shape(*a);
                let m = self.shape(*b)[1];
                if want(*a) {
                    let bv = val(*b);
                    let ga = accumulate(grads, *a, n * k);
                    matmul_nt_into(g, bv, ga, n, k, m);
                }
                if want(*b) {
                    let av = val(*a);
                    let gb = accumulate(grads, *b, k * m);
                    matmul_tn_into(av, g, gb, n, k, m);
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if want(p) {
                        let gp = accumulate(grads, p, rows * pc);
                        for i in 0..rows {
                            let src = &g[i * cols + offset..i * cols + offset + pc];
                            for (x, y) in gp[i * pc..(i + 1) * pc].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Slice(a, start) => {
                if want(*a) {
                    let [rows, src_cols] = self.shape(*a);
                    let ga = accumulate(grads, *a, rows * src_cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * src_cols + start + j] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if want(*a) {
                    let ga = accumulate(grads, *a, len(*a));
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if want(*a) {
                    let n = len(*a);
                    let ga = accumulate(grads, *a, n);
                    let s = g[0] / n as f64;
                    for x in ga.iter_mut() {
                        *x += s;
                    }
                }
            }
            Op::Exp(a) => self.unary_back(*a, g, grads, |i, _| out[i]),
            Op::Log(a) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| 1.0 / av[i])
            }
            Op::Sigmoid(a) => self.unary_back(*a, g, grads, |i, _| out[i] * (1.0 - out[i])),
            Op::Tanh(a) => self.unary_back(*a, g, grads, |i, _| 1.0 - out[i] * out[i]),
            Op::Softplus(a) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| sigmoid(av[i]))
            }
            Op::LeakyRelu(a, slope) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| if av[i] >= 0.0 { 1.0 } else { *slope })
            }
            Op::Clamp(a, lo, hi) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| if av[i] < *lo || av[i] > *hi { 0.0 } else { 1.0 })
            }
            Op::LogAddExp(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.unary_back(*a, g, grads, |i, _| (av[i] - out[i]).exp());
                self.unary_back(*b, g, grads, |i, _| (bv[i] - out[i]).exp());
            }
            Op::Lgamma(a) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| digamma_unchecked(av[i]))
            }
            Op::Digamma(a) => {
                let av = val(*a);
                self.unary_back(*a, g, grads, |i, _| trigamma_unchecked(av[i]))
            }
            Op::LogSoftmax(a) => {
                if want(*a) {
                    let rows = node.value.rows();
                    let ga = accumulate(grads, *a, rows * cols);
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..cols {
                            ga[i * cols + j] += gr[j] - out[i * cols + j].exp() * gsum;
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, weights, probs } => {
                if want(*logits) {
                    let [rows, c] = self.shape(*logits);
                    let gl = accumulate(grads, *logits, rows * c);
                    for i in 0..rows {
                        let w = weights[i] * g[0];
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            gl[i * c + j] += w * probs[i * c + j];
                        }
                        gl[i * c + targets[i]] -= w;
                    }
                }
            }
            Op::Pick { input, targets, weights } => {
                if want(*input) {
                    let [rows, c] = self.shape(*input);
                    let gi = accumulate(grads, *input, rows * c);
                    for i in 0..rows {
                        gi[i * c + targets[i]] += weights[i] * g[0];
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if want(*table) {
                    let [vocab, dim] = self.shape(*table);
                    let gt = accumulate(grads, *table, vocab * dim);
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            gt[id * dim + j] += g[r * dim + j];
                        }
                    }
                }
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, m, d) = (ta.rows(), tb.rows(), ta.cols());
                // ∂/∂a_i = Σ_j 2 g_ij (a_i − b_j), ∂/∂b_j = −Σ_i 2 g_ij (a_i − b_j)
                let mut da = if want(*a) { Some(vec![0.0; n * d]) } else { None };
                let mut db = if want(*b) { Some(vec![0.0; m * d]) } else { None };
                for i in 0..n {
                    let x = ta.row(i);
                    for j in 0..m {
                        let w = 2.0 * g[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        let y = tb.row(j);
                        for k in 0..d {
                            let diff = w * (x[k] - y[k]);
                            if let Some(da) = da.as_mut() {
                                da[i * d + k] += diff;
                            }
                            if let Some(db) = db.as_mut() {
                                db[j * d + k] -= diff;
                            }
                        }
                    }
                }
                if let Some(da) = da {
                    let ga = accumulate(grads, *a, n * d);
                    for (x, y) in ga.iter_mut().zip(da) {
                        *x += y;
                    }
                }
                if let Some(db) = db {
                    let gb = accumulate(grads, *b, m * d);
                    for (x, y) in gb.iter_mut().zip(db) {
                        *x += y;
                    }
                }
            }
            Op::Elementwise { inputs, partials } => {
                for (&v, p) in inputs.iter().zip(partials) {
                    self.unary_back(v, g, grads, |i, _| p[i]);
                }
            }
        }
    }

    fn unary_back(&self, a: Var, g: &[f64], grads: &mut [Option<Vec<f64>>], local: impl Fn(usize, f64) -> f64) {
        if !self.nodes[a.0].tracked {
            return;
        }
        let ga = accumulate(grads, a, g.len());
        for (i, (x, y)) in ga.iter_mut().zip(g).enumerate() {
            if *y != 0.0 {
                *x += y * local(i, *y);
            }
        }
    }
}

/// Builds a graph over `inputs` (all tracked), runs it forward and backward.
///
/// Returns the scalar output's value and one gradient per input.
pub fn forward_backward(
    inputs: &[Tensor],
    build: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let value = g.value(out).clone();
    Ok((value, vars.iter().map(|&v| grads.get(v)).collect()))
}
