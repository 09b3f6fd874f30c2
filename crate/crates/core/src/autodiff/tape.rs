//! Dynamic reverse-mode tape.
//!
//! Every primitive appends a node holding its forward value and the
//! references it was computed from. Node indices are topologically ordered
//! by construction, so a reverse sweep over the node list visits each node
//! after all of its consumers.

use std::cell::RefCell;
use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
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
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Maxout {
        input: Var,
        pool: usize,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation: the ordered primitive applications of one forward
/// pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, Var>>,
}

/// Adjoints for every node of a tape after a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when no
    /// gradient reached it (detached or unused).
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Stable `ln(sum(exp(z)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].rows, nodes[v.0].cols)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Records an input tensor. Gradients reach it only when the tensor was
    /// created with `requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if rows * cols != values.len() {
            return dim_err(format!("constant {rows}x{cols} given {} values", values.len()));
        }
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    pub fn row(&self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(1, n, values, Op::Leaf, false)
    }

    /// Binds a stored parameter. Repeated binds of the same id return the
    /// same node so adjoints accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow().get(&id) {
            return *v;
        }
        let t = store.tensor(id);
        let var = self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Param, true);
        self.bound.borrow_mut().insert(id, var);
        var
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape is consistent")
    }

    pub fn values(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.len(), 1);
        nodes[v.0].value[0]
    }

    /// Normalized probabilities computed by a `softmax_cross_entropy` node.
    pub fn softmax_probs(&self, v: Var) -> Option<Vec<f64>> {
        match &self.nodes.borrow()[v.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs.clone()),
            _ => None,
        }
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return dim_err(format!("matmul of {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.nodes.borrow();
            gemm_acc(&nodes[a.0].value, &nodes[b.0].value, &mut out, m, k, n);
        }
        Ok(self.push(m, n, out, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return dim_err(format!("{name} of {}x{} and {}x{}", da.0, da.1, db.0, db.1));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .iter()
                .zip(&nodes[b.0].value)
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        Ok(self.push(da.0, da.1, out, op, self.needs(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (r, n2) = self.dims(row);
        if r != 1 || n != n2 {
            return dim_err(format!("add_row of {m}x{n} and {r}x{n2}"));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let bias = &nodes[row.0].value;
            nodes[a.0]
                .value
                .chunks(n)
                .flat_map(|chunk| chunk.iter().zip(bias).map(|(x, b)| x + b))
                .collect()
        };
        Ok(self.push(m, n, out, Op::AddRow(a, row), self.needs(&[a, row])))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.nodes.borrow()[a.0].value.iter().map(|x| x * c).collect();
        self.push(m, n, out, Op::Scale(a, c), self.needs(&[a]))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.dims(a);
        let out = self.nodes.borrow()[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(m, n, out, op, self.needs(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Max over consecutive column groups of size `pool`; ties go to the
    /// lowest index in the group.
    pub fn maxout(&self, a: Var, pool: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if pool == 0 || n % pool != 0 {
            return dim_err(format!("maxout pool {pool} does not divide width {n}"));
        }
        let d = n / pool;
        let mut out = Vec::with_capacity(m * d);
        let mut argmax = Vec::with_capacity(m * d);
        {
            let nodes = self.nodes.borrow();
            for group in nodes[a.0].value.chunks(pool) {
                let mut best = 0;
                for (j, &v) in group.iter().enumerate().skip(1) {
                    if v > group[best] {
                        best = j;
                    }
                }
                out.push(group[best]);
                argmax.push(best);
            }
        }
        Ok(self.push(
            m,
            d,
            out,
            Op::Maxout {
                input: a,
                pool,
                argmax,
            },
            self.needs(&[a]),
        ))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat of zero parts");
        }
        let m = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return dim_err(format!("concat rows {r} vs {m}"));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        {
            let nodes = self.nodes.borrow();
            for i in 0..m {
                for (&p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[p.0].value[i * w..(i + 1) * w]);
                }
            }
        }
        Ok(self.push(m, n, out, Op::ConcatCols(parts.to_vec()), self.needs(parts)))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return dim_err(format!("slice {start}..{} of width {n}", start + len));
        }
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .chunks(n)
                .flat_map(|row| row[start..start + len].iter().copied())
                .collect()
        };
        Ok(self.push(m, len, out, Op::SliceCols { input: a, start }, self.needs(&[a])))
    }

    pub fn gather_rows(&self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if rows.is_empty() {
            return dim_err("gather of zero rows");
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Index(format!("row {bad} out of range for {m} rows")));
        }
        let out = {
            let nodes = self.nodes.borrow();
            rows.iter()
                .flat_map(|&r| nodes[a.0].value[r * n..(r + 1) * n].iter().copied())
                .collect()
        };
        Ok(self.push(
            rows.len(),
            n,
            out,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            self.needs(&[a]),
        ))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m * n != rows * cols {
            return dim_err(format!("reshape {m}x{n} to {rows}x{cols}"));
        }
        let out = self.values(a);
        Ok(self.push(rows, cols, out, Op::Reshape(a), self.needs(&[a])))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a), self.needs(&[a]))
    }

    /// Sums scalar nodes left to right.
    pub fn add_all(&self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("sum of zero terms".into()))?;
        rest.iter().try_fold(*first, |acc, &t| self.add(acc, t))
    }

    /// `-ln softmax(logits)[target]` over a single row (or column) of logits.
    pub fn softmax_cross_entropy(&self, logits: Var, target: usize) -> Result<Var> {
        let (m, n) = self.dims(logits);
        let len = m * n;
        if m != 1 && n != 1 {
            return dim_err(format!("cross entropy expects a vector, got {m}x{n}"));
        }
        if target >= len {
            return Err(Error::Index(format!("target {target} out of range for {len} logits")));
        }
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.0].value;
            let lse = log_sum_exp(z);
            (lse - z[target], softmax(z))
        };
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            },
            self.needs(&[logits]),
        ))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets.
    pub fn bce_with_logits(&self, logits: Var, targets: &[f64]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if m * n != targets.len() {
            return dim_err(format!("bce over {m}x{n} logits with {} targets", targets.len()));
        }
        let loss = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.0].value;
            z.iter()
                .zip(targets)
                .map(|(&z, &t)| softplus(z) - t * z)
                .sum::<f64>()
                / targets.len() as f64
        };
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            self.needs(&[logits]),
        ))
    }

    /// Reverse sweep from a scalar node; returns adjoints of every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.rows * root.cols != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                root.rows, root.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            backprop(&nodes, node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse sweep that adds every parameter adjoint into `store`.
    /// Calling it twice without zeroing accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (&id, &var) in self.bound.borrow().iter() {
            if let Some(g) = grads.wrt(var) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(grads)
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let live = |v: Var| nodes[v.0].requires_grad;
    let size = |v: Var| nodes[v.0].value.len();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = nodes[b.0].cols;
            if live(*a) {
                let bv = &nodes[b.0].value;
                let da = slot(grads, *a, m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if live(*b) {
                let av = &nodes[a.0].value;
                let db = slot(grads, *b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for (v, sign) in [(a, 1.0), (b, 1.0)] {
                if live(*v) {
                    slot(grads, *v, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
        }
        Op::Sub(a, b) => {
            for (v, sign) in [(a, 1.0), (b, -1.0)] {
                if live(*v) {
                    slot(grads, *v, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                }
            }
        }
        Op::Mul(a, b) => {
            if live(*a) {
                let other = &nodes[b.0].value;
                let da = slot(grads, *a, g.len());
                for ((d, x), o) in da.iter_mut().zip(g).zip(other) {
                    *d += x * o;
                }
            }
            if live(*b) {
                let other = &nodes[a.0].value;
                let db = slot(grads, *b, g.len());
                for ((d, x), o) in db.iter_mut().zip(g).zip(other) {
                    *d += x * o;
                }
            }
        }
        Op::AddRow(a, row) => {
            if live(*a) {
                slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
            if live(*row) {
                let n = node.cols;
                let dr = slot(grads, *row, n);
                for chunk in g.chunks(n) {
                    dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                }
            }
        }
        Op::Scale(a, c) => {
            if live(*a) {
                slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
            }
        }
        Op::Tanh(a) => {
            if live(*a) {
                let da = slot(grads, *a, g.len());
                for ((d, x), y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += x * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if live(*a) {
                let da = slot(grads, *a, g.len());
                for ((d, x), y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += x * y * (1.0 - y);
                }
            }
        }
        Op::Exp(a) => {
            if live(*a) {
                let da = slot(grads, *a, g.len());
                for ((d, x), y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += x * y;
                }
            }
        }
        Op::Maxout {
            input,
            pool,
            argmax,
        } => {
            if live(*input) {
                let len = size(*input);
                let da = slot(grads, *input, len);
                for (j, (x, &am)) in g.iter().zip(argmax).enumerate() {
                    da[j * pool + am] += x;
                }
            }
        }
        Op::ConcatCols(parts) => {
            let m = node.rows;
            let n = node.cols;
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].cols;
                if live(*p) {
                    let dp = slot(grads, *p, m * w);
                    for i in 0..m {
                        for (d, x) in dp[i * w..(i + 1) * w]
                            .iter_mut()
                            .zip(&g[i * n + offset..i * n + offset + w])
                        {
                            *d += x;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::SliceCols { input, start } => {
            if live(*input) {
                let n = nodes[input.0].cols;
                let len = node.cols;
                let da = slot(grads, *input, size(*input));
                for (i, chunk) in g.chunks(len).enumerate() {
                    for (d, x) in da[i * n + start..i * n + start + len].iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
            }
        }
        Op::GatherRows { input, rows } => {
            if live(*input) {
                let n = node.cols;
                let da = slot(grads, *input, size(*input));
                for (chunk, &r) in g.chunks(n).zip(rows) {
                    for (d, x) in da[r * n..(r + 1) * n].iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if live(*a) {
                slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
        }
        Op::Sum(a) => {
            if live(*a) {
                let len = size(*a);
                slot(grads, *a, len).iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::SoftmaxCe {
            logits,
            target,
            probs,
        } => {
            if live(*logits) {
                let dl = slot(grads, *logits, probs.len());
                for (j, (d, p)) in dl.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *d += g[0] * (p - onehot);
                }
            }
        }
        Op::BceLogits { logits, targets } => {
            if live(*logits) {
                let z = &nodes[logits.0].value;
                let n = targets.len() as f64;
                let dl = slot(grads, *logits, targets.len());
                for ((d, &zi), &t) in dl.iter_mut().zip(z).zip(targets) {
                    *d += g[0] * (sigmoid(zi) - t) / n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let tape = Tape::new();
        let eye = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = tape.constant(2, 2, vec![1.5, -2.0, 3.25, 4.0]).unwrap();
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.values(p), vec![1.5, -2.0, 3.25, 4.0]);

        let a = tape.constant(1, 1, vec![2.0]).unwrap();
        let b = tape.constant(1, 1, vec![3.0]).unwrap();
        assert_eq!(tape.values(tape.matmul(a, b).unwrap()), vec![6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("2x3 by 2x3"), "{msg}");
    }

    #[test]
    fn elementwise_basics() {
        let tape = Tape::new();
        let z = tape.row(vec![0.0; 3]);
        assert_eq!(tape.values(tape.tanh(z)), vec![0.0; 3]);
        assert_eq!(tape.values(tape.sigmoid(z)), vec![0.5; 3]);
        let other = tape.row(vec![1.0; 2]);
        assert!(matches!(tape.add(z, other), Err(Error::Dimension(_))));
        assert!(matches!(tape.mul(z, other), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxout_forward_and_errors() {
        let tape = Tape::new();
        let x = tape.row(vec![1.0, 3.0, 2.0, 5.0]);
        assert_eq!(tape.values(tape.maxout(x, 2).unwrap()), vec![3.0, 5.0]);
        let y = tape.row(vec![7.0]);
        assert_eq!(tape.values(tape.maxout(y, 1).unwrap()), vec![7.0]);
        assert!(matches!(tape.maxout(x, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxout_gradient_is_routing_mask_with_low_index_ties() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![2.0, 2.0, -1.0, 4.0, 0.5, 0.5]).with_grad(true));
        let m = tape.maxout(x, 3).unwrap();
        let w = tape.constant(1, 2, vec![3.0, -2.0]).unwrap();
        let loss = tape.sum(tape.mul(m, w).unwrap());
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[3.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let tape = Tape::new();
        let z = tape.row(vec![0.7; 4]);
        for t in 0..4 {
            let l = tape.softmax_cross_entropy(z, t).unwrap();
            assert!(close(tape.scalar(l), 4f64.ln(), 1e-12));
        }
        let big = tape.row(vec![100.0, 0.0, 0.0]);
        let l = tape.softmax_cross_entropy(big, 0).unwrap();
        assert!(tape.scalar(l) < 1e-10);
        let p = tape.softmax_probs(l).unwrap();
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        assert!(matches!(tape.softmax_cross_entropy(big, 3), Err(Error::Index(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = tape.sum(tape.mul(w, w).unwrap());
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id), vec![2.0, 4.0]);
        // second sweep without zeroing accumulates
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id), vec![4.0, 8.0]);
    }

    #[test]
    fn detached_leaf_gets_no_gradient() {
        let tape = Tape::new();
        let live = tape.leaf(&Tensor::vector(vec![1.0, -1.0]).with_grad(true));
        let dead = tape.leaf(&Tensor::vector(vec![0.5, 2.0]));
        let loss = tape.sum(tape.mul(live, dead).unwrap());
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.wrt(live).unwrap(), &[0.5, 2.0]);
        assert!(g.wrt(dead).is_none());
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).with_grad(true));
        assert!(matches!(tape.gradients(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_and_slice_route_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap().with_grad(true));
        let rows = tape.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.values(rows), vec![5., 6., 1., 2., 5., 6.]);
        let col = tape.slice_cols(rows, 1, 1).unwrap();
        let loss = tape.sum(col);
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0., 1., 0., 0., 0., 2.]);
        assert!(matches!(tape.gather_rows(x, &[3]), Err(Error::Index(_))));
    }
}
