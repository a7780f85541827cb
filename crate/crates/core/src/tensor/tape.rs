//! Define-by-run autodiff tape.
//!
//! Each op pushes one node holding the op kind, input handles, the forward
//! value, and a zeroed gradient buffer. [`Tape::backward`] seeds the loss
//! gradient with 1 and visits nodes once in reverse insertion order,
//! accumulating into input gradients. Handles ([`Var`]) are plain indices,
//! so cloning is free and the graph is implicitly topologically sorted.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Dot(Var, Var),
    Sum(Var),
    Max(Var),
    Softmax(Var),
    CrossEntropy(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Sqrt(..) => "sqrt",
            Op::Dot(..) => "dot",
            Op::Sum(..) => "sum",
            Op::Max(..) => "max",
            Op::Softmax(..) => "softmax",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Row(..) => "row",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    /// Saved activations needed by backward (softmax probabilities for
    /// cross-entropy, argmax index for max).
    aux: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerical floor applied before taking logarithms in cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance for "target sums to one" checks on probability vectors.
pub const DISTRIBUTION_TOL: f64 = 1e-6;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, aux: Vec<f64>) -> Result<Var> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let n = value.len();
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: vec![0.0; n],
            aux,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf from raw data; used for constants and model inputs.
    pub fn leaf(&mut self, shape: &[usize], data: &[f64]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "leaf shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        self.push(Op::Leaf, shape.to_vec(), data.to_vec(), Vec::new())
    }

    /// Leaf holding a copy of a parameter tensor's data.
    pub fn leaf_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape(), t.data())
    }

    pub fn leaf_scalar(&mut self, v: f64) -> Result<Var> {
        self.leaf(&[1], &[v])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    /// Adds this node's gradient into the tensor's gradient buffer,
    /// optionally scaled; used to hand tape gradients back to parameters.
    pub fn accumulate_grad(&self, v: Var, scale: f64, into: &mut Tensor) -> Result<()> {
        let g = &self.nodes[v.0].grad;
        if g.len() != into.numel() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: self.nodes[v.0].shape.clone(),
                rhs: into.shape().to_vec(),
            });
        }
        for (dst, src) in into.grad_mut().iter_mut().zip(g) {
            *dst += scale * src;
        }
        Ok(())
    }

    // ----- elementwise binary ops (identical shapes, or one side scalar) ---

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let (na, nb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if sa == sb {
            Ok(sa.clone())
        } else if nb == 1 {
            Ok(sa.clone())
        } else if na == 1 {
            Ok(sb.clone())
        } else {
            Err(Error::Dimension {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.binary_shape(name, a, b)?;
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        {
            let va = &self.nodes[a.0].value;
            let vb = &self.nodes[b.0].value;
            for i in 0..n {
                let x = va[if va.len() == 1 { 0 } else { i }];
                let y = vb[if vb.len() == 1 { 0 } else { i }];
                out.push(f(x, y));
            }
        }
        self.push(op, shape, out, Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|v| c * v).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale(a, c), shape, out, Vec::new())
    }

    // ----- elementwise unary ----------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, shape, out, Vec::new())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    // ----- matrix / vector ------------------------------------------------

    /// Matrix product. Accepts `[m,k]×[k,n] -> [m,n]`, `[m,k]×[k] -> [m]`,
    /// and `[k]×[k,n] -> [n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let mismatch = || Error::Dimension {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (shape, out) = {
            let va = &self.nodes[a.0].value;
            let vb = &self.nodes[b.0].value;
            match (sa.len(), sb.len()) {
                (2, 2) => {
                    let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
                    if k != k2 {
                        return Err(mismatch());
                    }
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let brow = &vb[p * n..(p + 1) * n];
                            let orow = &mut out[i * n..(i + 1) * n];
                            for j in 0..n {
                                orow[j] += x * brow[j];
                            }
                        }
                    }
                    (vec![m, n], out)
                }
                (2, 1) => {
                    let (m, k) = (sa[0], sa[1]);
                    if k != sb[0] {
                        return Err(mismatch());
                    }
                    let mut out = vec![0.0; m];
                    for i in 0..m {
                        let row = &va[i * k..(i + 1) * k];
                        out[i] = row.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
                    }
                    (vec![m], out)
                }
                (1, 2) => {
                    let (k, n) = (sb[0], sb[1]);
                    if sa[0] != k {
                        return Err(mismatch());
                    }
                    let mut out = vec![0.0; n];
                    for p in 0..k {
                        let x = va[p];
                        if x == 0.0 {
                            continue;
                        }
                        let brow = &vb[p * n..(p + 1) * n];
                        for j in 0..n {
                            out[j] += x * brow[j];
                        }
                    }
                    (vec![n], out)
                }
                _ => return Err(mismatch()),
            }
        };
        self.push(Op::Matmul(a, b), shape, out, Vec::new())
    }

    /// Dot product of two equal-length 1-D tensors; returns a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        {
            let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
            if sa.len() != 1 || sb.len() != 1 || sa[0] != sb[0] {
                return Err(Error::Dimension {
                    op: "dot",
                    lhs: sa.clone(),
                    rhs: sb.clone(),
                });
            }
        }
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(Op::Dot(a, b), vec![1], vec![v], Vec::new())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![1], vec![v], Vec::new())
    }

    /// Maximum entry of a 1-D tensor; ties resolve to the first index and
    /// the gradient routes there.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let best = {
            let value = &self.nodes[a.0].value;
            if value.is_empty() {
                return Err(Error::contract("max over empty tensor"));
            }
            let mut best = 0usize;
            for (i, v) in value.iter().enumerate() {
                if *v > value[best] {
                    best = i;
                }
            }
            best
        };
        let v = self.nodes[a.0].value[best];
        self.push(Op::Max(a), vec![1], vec![v], vec![best as f64])
    }

    /// Stable softmax over a 1-D tensor (max subtraction before exp).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        {
            let node = &self.nodes[a.0];
            if node.shape.len() != 1 || node.value.is_empty() {
                return Err(Error::Dimension {
                    op: "softmax",
                    lhs: node.shape.clone(),
                    rhs: vec![],
                });
            }
        }
        let out = stable_softmax(&self.nodes[a.0].value);
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Softmax(a), shape, out, Vec::new())
    }

    /// `-Σ target · log softmax(logits)`, with the log floored at
    /// [`LOG_FLOOR`]. `target` must be a distribution: entries summing to 1
    /// within [`DISTRIBUTION_TOL`]. Gradients flow to both arguments.
    pub fn cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        {
            let (sl, st) = (&self.nodes[logits.0].shape, &self.nodes[target.0].shape);
            if sl.len() != 1 || st.len() != 1 || sl[0] != st[0] {
                return Err(Error::Dimension {
                    op: "cross_entropy",
                    lhs: sl.clone(),
                    rhs: st.clone(),
                });
            }
        }
        let tsum: f64 = self.nodes[target.0].value.iter().sum();
        if (tsum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(Error::contract(format!(
                "cross_entropy target is not a distribution (sum = {tsum})"
            )));
        }
        let p = stable_softmax(&self.nodes[logits.0].value);
        let mut loss = 0.0;
        for (ti, pi) in self.nodes[target.0].value.iter().zip(&p) {
            if *ti != 0.0 {
                loss -= ti * pi.max(LOG_FLOOR).ln();
            }
        }
        self.push(Op::CrossEntropy(logits, target), vec![1], vec![loss], p)
    }

    /// Concatenates 1-D tensors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let mut out = Vec::new();
        for v in parts {
            let node = &self.nodes[v.0];
            if node.shape.len() != 1 {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: node.shape.clone(),
                    rhs: vec![],
                });
            }
            out.extend_from_slice(&node.value);
        }
        let shape = vec![out.len()];
        self.push(Op::Concat(parts.to_vec()), shape, out, Vec::new())
    }

    /// `a[start .. start+len]` of a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let node = &self.nodes[a.0];
            if node.shape.len() != 1 || start + len > node.value.len() {
                return Err(Error::contract(format!(
                    "slice [{start}, {}) out of bounds for shape {:?}",
                    start + len,
                    node.shape
                )));
            }
            node.value[start..start + len].to_vec()
        };
        self.push(Op::Slice(a, start), vec![len], out, Vec::new())
    }

    /// Row `r` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let (cols, out) = {
            let node = &self.nodes[a.0];
            if node.shape.len() != 2 || r >= node.shape[0] {
                return Err(Error::contract(format!(
                    "row {r} out of bounds for shape {:?}",
                    node.shape
                )));
            }
            let cols = node.shape[1];
            (cols, node.value[r * cols..(r + 1) * cols].to_vec())
        };
        self.push(Op::Row(a, r), vec![cols], out, Vec::new())
    }

    /// Reinterprets the data with a new shape of identical element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = {
            let node = &self.nodes[a.0];
            let n: usize = shape.iter().product();
            if n != node.value.len() {
                return Err(Error::Dimension {
                    op: "reshape",
                    lhs: node.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            node.value.clone()
        };
        self.push(Op::Reshape(a), shape.to_vec(), out, Vec::new())
    }

    // ----- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Node gradients are reset first, the
    /// loss gradient is seeded with 1, and every node is visited exactly once
    /// in reverse insertion order. Leaf gradients can then be read with
    /// [`Tape::grad`] or handed to parameters via [`Tape::accumulate_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            if !node.grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            let g = &node.grad;
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa_len = before[a.0].shape.len();
                    let sb_len = before[b.0].shape.len();
                    match (sa_len, sb_len) {
                        (2, 2) => {
                            let m = before[a.0].shape[0];
                            let k = before[a.0].shape[1];
                            let n = before[b.0].shape[1];
                            for i in 0..m {
                                for j in 0..n {
                                    let go = g[i * n + j];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for p in 0..k {
                                        before[a.0].grad[i * k + p] +=
                                            go * before[b.0].value[p * n + j];
                                        before[b.0].grad[p * n + j] +=
                                            go * before[a.0].value[i * k + p];
                                    }
                                }
                            }
                        }
                        (2, 1) => {
                            let m = before[a.0].shape[0];
                            let k = before[a.0].shape[1];
                            for i in 0..m {
                                let go = g[i];
                                if go == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    before[a.0].grad[i * k + p] += go * before[b.0].value[p];
                                    before[b.0].grad[p] += go * before[a.0].value[i * k + p];
                                }
                            }
                        }
                        (1, 2) => {
                            let k = before[b.0].shape[0];
                            let n = before[b.0].shape[1];
                            for p in 0..k {
                                let x = before[a.0].value[p];
                                let mut acc = 0.0;
                                for j in 0..n {
                                    let go = g[j];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    acc += go * before[b.0].value[p * n + j];
                                    before[b.0].grad[p * n + j] += go * x;
                                }
                                before[a.0].grad[p] += acc;
                            }
                        }
                        _ => unreachable!("matmul shapes validated at forward"),
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate_broadcast(&mut before[a.0], g, |_i, go| go);
                    accumulate_broadcast(&mut before[b.0], g, |_i, go| go);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate_broadcast(&mut before[a.0], g, |_i, go| go);
                    accumulate_broadcast(&mut before[b.0], g, |_i, go| -go);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let va = broadcast_read(&before[a.0].value, g.len());
                    let vb = broadcast_read(&before[b.0].value, g.len());
                    accumulate_broadcast(&mut before[a.0], g, |i, go| go * vb[i]);
                    accumulate_broadcast(&mut before[b.0], g, |i, go| go * va[i]);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let vb = broadcast_read(&before[b.0].value, g.len());
                    let y = &node.value;
                    accumulate_broadcast(&mut before[a.0], g, |i, go| go / vb[i]);
                    accumulate_broadcast(&mut before[b.0], g, |i, go| -go * y[i] / vb[i]);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    for (dst, go) in before[a.0].grad.iter_mut().zip(g) {
                        *dst += c * go;
                    }
                }
                Op::Sigmoid(a) => {
                    for ((dst, go), y) in before[a.0].grad.iter_mut().zip(g).zip(&node.value) {
                        *dst += go * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    for ((dst, go), y) in before[a.0].grad.iter_mut().zip(g).zip(&node.value) {
                        *dst += go * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let input = &mut before[a.0];
                    for i in 0..g.len() {
                        if input.value[i] > 0.0 {
                            input.grad[i] += g[i];
                        }
                    }
                }
                Op::Sqrt(a) => {
                    for ((dst, go), y) in before[a.0].grad.iter_mut().zip(g).zip(&node.value) {
                        *dst += go / (2.0 * y);
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let go = g[0];
                    for p in 0..node_len(&before[a.0]) {
                        before[a.0].grad[p] += go * before[b.0].value[p];
                        before[b.0].grad[p] += go * before[a.0].value[p];
                    }
                }
                Op::Sum(a) => {
                    let go = g[0];
                    for dst in before[a.0].grad.iter_mut() {
                        *dst += go;
                    }
                }
                Op::Max(a) => {
                    let idx = node.aux[0] as usize;
                    before[a.0].grad[idx] += g[0];
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                    for (dst, (yi, gi)) in before[a.0].grad.iter_mut().zip(y.iter().zip(g)) {
                        *dst += yi * (gi - inner);
                    }
                }
                Op::CrossEntropy(l, t) => {
                    let (l, t) = (*l, *t);
                    let go = g[0];
                    let p = &node.aux;
                    let tvec = before[t.0].value.clone();
                    let tsum: f64 = tvec.iter().sum();
                    for j in 0..p.len() {
                        before[l.0].grad[j] += go * (tsum * p[j] - tvec[j]);
                    }
                    for j in 0..p.len() {
                        before[t.0].grad[j] -= go * p[j].max(LOG_FLOOR).ln();
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for v in parts {
                        let n = node_len(&before[v.0]);
                        for (dst, go) in before[v.0].grad.iter_mut().zip(&g[off..off + n]) {
                            *dst += go;
                        }
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let start = *start;
                    for (j, go) in g.iter().enumerate() {
                        before[a.0].grad[start + j] += go;
                    }
                }
                Op::Row(a, r) => {
                    let r = *r;
                    let cols = node.value.len();
                    for (j, go) in g.iter().enumerate() {
                        before[a.0].grad[r * cols + j] += go;
                    }
                }
                Op::Reshape(a) => {
                    for (dst, go) in before[a.0].grad.iter_mut().zip(g) {
                        *dst += go;
                    }
                }
            }
        }
        Ok(())
    }
}

fn node_len(n: &Node) -> usize {
    n.value.len()
}

/// Softmax with max subtraction; output sums to 1 up to rounding.
pub fn stable_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Accumulates an output gradient into an input that may have been
/// broadcast from a single element.
fn accumulate_broadcast(input: &mut Node, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    if input.value.len() == 1 && g.len() > 1 {
        let mut acc = 0.0;
        for (i, go) in g.iter().enumerate() {
            acc += f(i, *go);
        }
        input.grad[0] += acc;
    } else {
        for (i, go) in g.iter().enumerate() {
            input.grad[i] += f(i, *go);
        }
    }
}

/// Reads a possibly-scalar input as if broadcast to length `n`.
fn broadcast_read(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == 1 && n > 1 {
        vec![v[0]; n]
    } else {
        v.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_4: f64 = 1.386_294_361_119_890_6;

    /// Central finite differences on a forward closure; compares against
    /// tape gradients entry by entry with a relative tolerance.
    fn gradcheck(
        inputs: &[(Vec<usize>, Vec<f64>)],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        tol: f64,
    ) {
        let forward = |values: &[Vec<f64>]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .zip(values)
                .map(|((shape, _), data)| tape.leaf(shape, data).unwrap())
                .collect();
            let loss = build(&mut tape, &vars);
            tape.scalar_value(loss)
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(shape, data)| tape.leaf(shape, data).unwrap())
            .collect();
        let loss = build(&mut tape, &vars);
        tape.backward(loss).unwrap();

        let h = 1e-5;
        let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
        for (vi, (_, data)) in inputs.iter().enumerate() {
            for ei in 0..data.len() {
                let mut plus = base.clone();
                plus[vi][ei] += h;
                let mut minus = base.clone();
                minus[vi][ei] -= h;
                let fd = (forward(&plus) - forward(&minus)) / (2.0 * h);
                let an = tape.grad(vars[vi])[ei];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((an - fd) / denom).abs() < tol,
                    "input {vi} entry {ei}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_hand_value() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.leaf(&[2, 1], &[1.0, 1.0]).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[3.0, 7.0]);
        assert_eq!(tape.shape_of(c), &[2, 1]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[2, 2], &[3.0, -1.0, 0.5, 2.0]).unwrap();
        let eye = tape.leaf(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(c), tape.value(a));
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[2, 3], &[0.0; 6]).unwrap();
        let b = tape.leaf(&[2, 2], &[0.0; 4]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_vector_forms() {
        let mut tape = Tape::new();
        let m = tape.leaf(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = tape.leaf(&[3], &[1.0, 0.0, -1.0]).unwrap();
        let y = tape.matmul(m, x).unwrap();
        assert_eq!(tape.value(y), &[-2.0, -2.0]);
        let v = tape.leaf(&[2], &[1.0, 1.0]).unwrap();
        let z = tape.matmul(v, m).unwrap();
        assert_eq!(tape.value(z), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn sigmoid_tanh_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[2], &[0.0, 1.0]).unwrap();
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        assert!((tape.value(s)[0] - 0.5).abs() < 1e-15);
        assert!((tape.value(s)[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(tape.value(t)[0], 0.0);
        assert!((tape.value(t)[1] - 0.761_594_155_955_764_9).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[4], &[0.3, -1.2, 2.0, 0.0]).unwrap();
        let p = tape.softmax(x).unwrap();
        let sum: f64 = tape.value(p).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let c = tape.leaf_scalar(123.0).unwrap();
        let shifted = tape.add(x, c).unwrap();
        let p2 = tape.softmax(shifted).unwrap();
        for (a, b) in tape.value(p).iter().zip(tape.value(p2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(&[3], &[1.0, 1.0, 1.0]).unwrap();
        let p = tape.softmax(x).unwrap();
        for v in tape.value(p) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_vocab() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&[4], &[0.0; 4]).unwrap();
        let target = tape.leaf(&[4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let ce = tape.cross_entropy(logits, target).unwrap();
        assert!((tape.scalar_value(ce) - LN_4).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&[3], &[0.0; 3]).unwrap();
        let target = tape.leaf(&[3], &[0.5, 0.2, 0.2]).unwrap();
        let err = tape.cross_entropy(logits, target).unwrap_err();
        assert!(err.to_string().contains("not a distribution"));
    }

    #[test]
    fn non_finite_forward_aborts_naming_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[1], &[1.0]).unwrap();
        let b = tape.leaf(&[1], &[0.0]).unwrap();
        let err = tape.div(a, b).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "div" }));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[2], &[1.0, 2.0]).unwrap();
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn max_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[4], &[1.0, 7.0, 7.0, 0.0]).unwrap();
        let m = tape.max(a).unwrap();
        assert_eq!(tape.scalar_value(m), 7.0);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(a), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gradcheck_matmul_2d_2d() {
        gradcheck(
            &[
                (vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 0.9, -0.4]),
                (vec![3, 2], vec![1.1, -0.2, 0.4, 0.8, -1.5, 0.6]),
            ],
            |t, v| {
                let c = t.matmul(v[0], v[1]).unwrap();
                let flat = t.reshape(c, &[4]).unwrap();
                let w = t.leaf(&[4], &[0.3, -0.7, 1.2, 0.5]).unwrap();
                t.dot(flat, w).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_matmul_vector_forms() {
        gradcheck(
            &[
                (vec![3, 2], vec![0.2, -0.6, 1.4, 0.8, -0.3, 0.1]),
                (vec![2], vec![0.7, -1.1]),
            ],
            |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let w = t.leaf(&[3], &[1.0, -0.5, 0.25]).unwrap();
                t.dot(y, w).unwrap()
            },
            1e-4,
        );
        gradcheck(
            &[
                (vec![3], vec![0.7, -1.1, 0.2]),
                (vec![3, 2], vec![0.2, -0.6, 1.4, 0.8, -0.3, 0.1]),
            ],
            |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let w = t.leaf(&[2], &[0.9, -0.4]).unwrap();
                t.dot(y, w).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_elementwise_and_broadcast() {
        gradcheck(
            &[
                (vec![3], vec![0.4, -0.9, 1.7]),
                (vec![3], vec![-0.2, 0.8, 0.5]),
                (vec![1], vec![0.6]),
            ],
            |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let b = t.mul(a, v[2]).unwrap();
                let c = t.sub(b, v[1]).unwrap();
                let d = t.div(c, v[2]).unwrap();
                t.sum(d).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_unary_chain() {
        gradcheck(
            &[(vec![4], vec![0.3, -1.2, 0.8, 2.0])],
            |t, v| {
                let s = t.sigmoid(v[0]).unwrap();
                let th = t.tanh(s).unwrap();
                let r = t.relu(th).unwrap();
                let sq = t.add(r, s).unwrap();
                let root = t.sqrt(sq).unwrap();
                t.sum(root).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_softmax_cross_entropy() {
        // The target leaf goes through a softmax so finite-difference
        // perturbations keep it a valid distribution; the chain still
        // exercises the cross-entropy gradient w.r.t. both arguments.
        gradcheck(
            &[
                (vec![5], vec![0.2, -0.4, 1.3, 0.0, -0.9]),
                (vec![5], vec![0.4, -0.1, 0.8, 0.05, 0.3]),
            ],
            |t, v| {
                let target = t.softmax(v[1]).unwrap();
                t.cross_entropy(v[0], target).unwrap()
            },
            1e-4,
        );
        gradcheck(
            &[(vec![4], vec![0.5, -0.5, 0.2, 1.0])],
            |t, v| {
                let p = t.softmax(v[0]).unwrap();
                let w = t.leaf(&[4], &[0.9, -0.3, 0.4, 1.2]).unwrap();
                t.dot(p, w).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_structural_ops() {
        gradcheck(
            &[
                (vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 0.9, -0.4]),
                (vec![2], vec![0.7, -0.2]),
            ],
            |t, v| {
                let r0 = t.row(v[0], 0).unwrap();
                let r1 = t.row(v[0], 1).unwrap();
                let cat = t.concat(&[r0, v[1], r1]).unwrap();
                let sl = t.slice(cat, 2, 5).unwrap();
                let m = t.max(sl).unwrap();
                let s = t.sum(cat).unwrap();
                let sc = t.scale(s, 0.5).unwrap();
                t.add(m, sc).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_dot_with_shared_input() {
        gradcheck(
            &[(vec![3], vec![0.6, -1.3, 0.9])],
            |t, v| t.dot(v[0], v[0]).unwrap(),
            1e-4,
        );
    }

    #[test]
    fn accumulate_grad_scales_into_tensor() {
        let mut tape = Tape::new();
        let mut p = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let v = tape.leaf_tensor(&p).unwrap();
        let s = tape.sum(v).unwrap();
        tape.backward(s).unwrap();
        tape.accumulate_grad(v, 0.5, &mut p).unwrap();
        tape.accumulate_grad(v, 0.5, &mut p).unwrap();
        assert_eq!(p.grad(), &[1.0, 1.0]);
    }
}
