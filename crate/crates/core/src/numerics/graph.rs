use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
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
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var, usize),
    Conv1d(Var, Var, Option<Var>),
    MaxPool(Var, Vec<usize>),
    CrossEntropy(Var, usize, Vec<f64>),
    CrossEntropyRows(Var, Vec<usize>, Vec<f64>),
    AddRow(Var, Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
}

/// Define-by-run tape for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order and [`Graph::backward`] is a single reverse sweep.
/// A graph is meant to live for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Dot product with eight independent accumulators, which lets the
/// compiler vectorise the reduction.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    /// Records a leaf. Gradients are only accumulated for leaves with
    /// `requires_grad` and the nodes that depend on them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node
    /// received any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like the node; zeros if none flowed.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.values[v.0].shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::dim(format!(
                "matmul of {} and {}",
                shape_str(ta),
                shape_str(tb)
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let aik = ad[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(&bd[kk * n..(kk + 1) * n]) {
                    *o += aik * bv;
                }
            }
        }
        let req = self.req(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), req))
    }

    /// Matrix `[m, k]` times vector `[k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (&self.values[w.0], &self.values[x.0]);
        if tw.rank() != 2 || tx.rank() != 1 || tw.cols() != tx.len() {
            return Err(Error::dim(format!(
                "matvec of {} and {}",
                shape_str(tw),
                shape_str(tx)
            )));
        }
        let (m, k) = (tw.rows(), tw.cols());
        let xd = tx.data();
        let out: Vec<f64> = tw
            .data()
            .chunks_exact(k)
            .map(|row| dot(row, xd))
            .collect();
        debug_assert_eq!(out.len(), m);
        let req = self.req(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), req))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.values[a.0];
        if ta.rank() != 2 {
            return Err(Error::dim(format!("transpose of {}", shape_str(ta))));
        }
        let (m, n) = (ta.rows(), ta.cols());
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let req = self.req(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), req))
    }

    fn broadcast(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if ta.is_scalar() {
            let s = ta.item();
            let data = tb.data().iter().map(|&y| f(s, y)).collect();
            Tensor::new(tb.shape().to_vec(), data)
        } else if tb.is_scalar() {
            let s = tb.item();
            let data = ta.data().iter().map(|&x| f(x, s)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else {
            Err(Error::dim(format!(
                "{what} of incompatible shapes {} and {}",
                shape_str(ta),
                shape_str(tb)
            )))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast(a, b, "add", |x, y| x + y)?;
        let req = self.req(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast(a, b, "sub", |x, y| x - y)?;
        let req = self.req(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast(a, b, "mul", |x, y| x * y)?;
        let req = self.req(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), req))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = &self.values[a.0];
        let data = ta.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let req = self.req(&[a]);
        self.push(out, Op::Scale(a, factor), req)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = &self.values[a.0];
        let data = ta.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let req = self.req(&[a]);
        self.push(out, op, req)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Softmax along `axis` (0 for vectors; 0 or 1 for matrices), computed
    /// with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.values[a.0];
        let lanes = lanes(ta.shape(), axis)?;
        let mut out = ta.data().to_vec();
        for (start, stride, len) in lanes {
            softmax_lane(&mut out, start, stride, len);
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.req(&[a]);
        Ok(self.push(out, Op::Softmax(a, axis), req))
    }

    /// Valid cross-correlation of `input [d, k]` with `filters [f, d, w]`,
    /// giving `[f, k - w + 1]`. `bias`, when given, has shape `[f]`.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Option<Var>) -> Result<Var> {
        let (ti, tf) = (&self.values[input.0], &self.values[filters.0]);
        if ti.rank() != 2 || tf.rank() != 3 || tf.shape()[1] != ti.rows() {
            return Err(Error::dim(format!(
                "conv1d of input {} with filters {}",
                shape_str(ti),
                shape_str(tf)
            )));
        }
        let (d, k) = (ti.rows(), ti.cols());
        let (nf, w) = (tf.shape()[0], tf.shape()[2]);
        if k < w {
            return Err(Error::dim(format!(
                "conv1d sequence length {k} is shorter than filter width {w}"
            )));
        }
        if let Some(b) = bias {
            let tb = &self.values[b.0];
            if tb.rank() != 1 || tb.len() != nf {
                return Err(Error::dim(format!(
                    "conv1d bias {} for {nf} filters",
                    shape_str(tb)
                )));
            }
        }
        let l = k - w + 1;
        let (xd, fd) = (ti.data(), tf.data());
        let mut out = vec![0.0; nf * l];
        for fi in 0..nf {
            let orow = &mut out[fi * l..(fi + 1) * l];
            for c in 0..d {
                let xrow = &xd[c * k..(c + 1) * k];
                let frow = &fd[(fi * d + c) * w..(fi * d + c + 1) * w];
                for (o, &fv) in frow.iter().enumerate() {
                    for (p, ov) in orow.iter_mut().enumerate() {
                        *ov += fv * xrow[p + o];
                    }
                }
            }
            if let Some(b) = bias {
                let bv = self.values[b.0].data()[fi];
                orow.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut inputs = vec![input, filters];
        inputs.extend(bias);
        let req = self.req(&inputs);
        Ok(self.push(Tensor::new(vec![nf, l], out)?, Op::Conv1d(input, filters, bias), req))
    }

    /// Row-wise maximum of `[f, L]`. Gradient goes to the first maximal
    /// position of each row.
    pub fn maxpool_over_time(&mut self, a: Var) -> Result<Var> {
        let ta = &self.values[a.0];
        if ta.rank() != 2 {
            return Err(Error::dim(format!("maxpool over {}", shape_str(ta))));
        }
        let (f, l) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(f);
        let mut arg = Vec::with_capacity(f);
        for r in 0..f {
            let row = ta.row(r);
            let mut best = 0;
            for p in 1..l {
                if row[p] > row[best] {
                    best = p;
                }
            }
            out.push(row[best]);
            arg.push(best);
        }
        let req = self.req(&[a]);
        Ok(self.push(Tensor::vector(out), Op::MaxPool(a, arg), req))
    }

    /// `-log softmax(logits)[gold]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let tl = &self.values[logits.0];
        if tl.rank() != 1 {
            return Err(Error::dim(format!("cross entropy over {}", shape_str(tl))));
        }
        if gold >= tl.len() {
            return Err(Error::Label(format!(
                "gold class {gold} out of range for {} classes",
                tl.len()
            )));
        }
        let (probs, lse) = softmax_lse(tl.data());
        let loss = lse - tl.data()[gold];
        let req = self.req(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, gold, probs), req))
    }

    /// Summed cross-entropy of every row of a `[n, c]` logit matrix
    /// against one gold class per row.
    pub fn cross_entropy_rows(&mut self, logits: Var, golds: &[usize]) -> Result<Var> {
        let tl = &self.values[logits.0];
        if tl.rank() != 2 || tl.rows() != golds.len() {
            return Err(Error::dim(format!(
                "row cross entropy over {} with {} gold classes",
                shape_str(tl),
                golds.len()
            )));
        }
        let c = tl.cols();
        if let Some(&bad) = golds.iter().find(|&&y| y >= c) {
            return Err(Error::Label(format!("gold class {bad} out of range for {c} classes")));
        }
        let mut probs = Vec::with_capacity(tl.len());
        let mut loss = 0.0;
        for (row, &y) in tl.data().chunks_exact(c).zip(golds) {
            let (p, lse) = softmax_lse(row);
            loss += lse - row[y];
            probs.extend(p);
        }
        let req = self.req(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropyRows(logits, golds.to_vec(), probs), req))
    }

    /// Adds the vector `b` to every row of the matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.rank() != 2 || tb.rank() != 1 || ta.cols() != tb.len() {
            return Err(Error::dim(format!("add_row of {} and {}", shape_str(ta), shape_str(tb))));
        }
        let bd = tb.data();
        let mut out = ta.data().to_vec();
        for row in out.chunks_exact_mut(bd.len()) {
            row.iter_mut().zip(bd).for_each(|(o, &v)| *o += v);
        }
        let shape = ta.shape().to_vec();
        let req = self.req(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(a, b), req))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        let req = self.req(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), req)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.values[a.0];
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let req = self.req(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), req)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.len() != tb.len() || ta.rank() != 1 || tb.rank() != 1 {
            return Err(Error::dim(format!(
                "dot of {} and {}",
                shape_str(ta),
                shape_str(tb)
            )));
        }
        let s = dot(ta.data(), tb.data());
        let req = self.req(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), req))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let mut out = Vec::new();
        for p in parts {
            let t = &self.values[p.0];
            if t.rank() != 1 {
                return Err(Error::dim(format!("concat of non-vector {}", shape_str(t))));
            }
            out.extend_from_slice(t.data());
        }
        let req = self.req(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), req))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or_else(|| Error::dim("stack of zero rows"))?;
        let width = self.values[first.0].len();
        let mut out = Vec::with_capacity(width * rows.len());
        for r in rows {
            let t = &self.values[r.0];
            if t.rank() != 1 || t.len() != width {
                return Err(Error::dim(format!(
                    "stack_rows of {} with row width {width}",
                    shape_str(t)
                )));
            }
            out.extend_from_slice(t.data());
        }
        let req = self.req(rows);
        Ok(self.push(Tensor::new(vec![rows.len(), width], out)?, Op::StackRows(rows.to_vec()), req))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.values[a.0];
        if t.rank() != 1 || len == 0 || start + len > t.len() {
            return Err(Error::dim(format!(
                "slice [{start}, {}) of {}",
                start + len,
                shape_str(t)
            )));
        }
        let out = t.data()[start..start + len].to_vec();
        let req = self.req(&[a]);
        Ok(self.push(Tensor::vector(out), Op::Slice(a, start), req))
    }

    /// Row `i` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = &self.values[a.0];
        if t.rank() != 2 || i >= t.rows() {
            return Err(Error::dim(format!("row {i} of {}", shape_str(t))));
        }
        let out = t.row(i).to_vec();
        let req = self.req(&[a]);
        Ok(self.push(Tensor::vector(out), Op::Row(a, i), req))
    }

    /// Inverted dropout with a freshly drawn mask; identity when `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let shape = self.values[a.0].shape().to_vec();
        let n = self.values[a.0].len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(a, m)
    }

    /// Populates gradients of every node that depends on a `requires_grad`
    /// leaf. Previous gradients are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let Graph {
            values,
            ops,
            requires,
            grads,
        } = self;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if requires[i] {
                propagate(&ops[i], &values[i], &g, values, requires, grads);
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn lanes(shape: &[usize], axis: usize) -> Result<Vec<(usize, usize, usize)>> {
    match (shape.len(), axis) {
        (1, 0) => Ok(vec![(0, 1, shape[0])]),
        (2, 1) => Ok((0..shape[0]).map(|r| (r * shape[1], 1, shape[1])).collect()),
        (2, 0) => Ok((0..shape[1]).map(|c| (c, shape[1], shape[0])).collect()),
        _ => Err(Error::dim(format!("softmax axis {axis} of shape {shape:?}"))),
    }
}

/// Softmax of `xs` together with its log-sum-exp, from one pass of `exp`.
fn softmax_lse(xs: &[f64]) -> (Vec<f64>, f64) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (probs, max + total.ln())
}

fn softmax_lane(data: &mut [f64], start: usize, stride: usize, len: usize) {
    let idx = |i: usize| start + i * stride;
    let max = (0..len).map(|i| data[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for i in 0..len {
        let e = (data[idx(i)] - max).exp();
        data[idx(i)] = e;
        total += e;
    }
    for i in 0..len {
        data[idx(i)] /= total;
    }
}

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    requires: &[bool],
    values: &[Tensor],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !requires[v.0] {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].len()]))
}

/// Adds `g` (shaped like the broadcast output) into the grad of `v`,
/// summing when `v` was a broadcast scalar. `factor(k)` scales element k.
fn acc_broadcast(
    grads: &mut [Option<Vec<f64>>],
    requires: &[bool],
    values: &[Tensor],
    v: Var,
    g: &[f64],
    factor: impl Fn(usize) -> f64,
) {
    let scalar_src = values[v.0].len() == 1 && g.len() != 1;
    if let Some(gv) = acc(grads, requires, values, v) {
        if scalar_src {
            gv[0] += g.iter().enumerate().map(|(k, &gk)| gk * factor(k)).sum::<f64>();
        } else {
            for (k, (dst, &gk)) in gv.iter_mut().zip(g).enumerate() {
                *dst += gk * factor(k);
            }
        }
    }
}

fn propagate(
    op: &Op,
    out: &Tensor,
    g: &[f64],
    values: &[Tensor],
    requires: &[bool],
    grads: &mut [Option<Vec<f64>>],
) {
    let at = |v: Var, k: usize| {
        let t = &values[v.0];
        if t.len() == 1 {
            t.data()[0]
        } else {
            t.data()[k]
        }
    };
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (&values[a.0], &values[b.0]);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if let Some(ga) = acc(grads, requires, values, *a) {
                for i in 0..m {
                    for kk in 0..k {
                        let brow = &tb.data()[kk * n..(kk + 1) * n];
                        ga[i * k + kk] +=
                            dot(&g[i * n..(i + 1) * n], brow);
                    }
                }
            }
            if let Some(gb) = acc(grads, requires, values, *b) {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = ta.data()[i * k + kk];
                        for (dst, &gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                            *dst += aik * gv;
                        }
                    }
                }
            }
        }
        Op::MatVec(w, x) => {
            let (tw, tx) = (&values[w.0], &values[x.0]);
            let k = tw.cols();
            if let Some(gw) = acc(grads, requires, values, *w) {
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    for (dst, &xv) in gw[i * k..(i + 1) * k].iter_mut().zip(tx.data()) {
                        *dst += gi * xv;
                    }
                }
            }
            if let Some(gx) = acc(grads, requires, values, *x) {
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    for (dst, &wv) in gx.iter_mut().zip(&tw.data()[i * k..(i + 1) * k]) {
                        *dst += gi * wv;
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (values[a.0].rows(), values[a.0].cols());
            if let Some(ga) = acc(grads, requires, values, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_broadcast(grads, requires, values, *a, g, |_| 1.0);
            acc_broadcast(grads, requires, values, *b, g, |_| 1.0);
        }
        Op::Sub(a, b) => {
            acc_broadcast(grads, requires, values, *a, g, |_| 1.0);
            acc_broadcast(grads, requires, values, *b, g, |_| -1.0);
        }
        Op::Mul(a, b) => {
            acc_broadcast(grads, requires, values, *a, g, |k| at(*b, k));
            acc_broadcast(grads, requires, values, *b, g, |k| at(*a, k));
        }
        Op::Scale(a, f) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * f);
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }
        }
        Op::Relu(a) => {
            let x = values[a.0].data();
            if let Some(ga) = acc(grads, requires, values, *a) {
                for ((d, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Softmax(a, axis) => {
            let y = out.data();
            let lanes = lanes(out.shape(), *axis).expect("validated in forward");
            if let Some(ga) = acc(grads, requires, values, *a) {
                for (start, stride, len) in lanes {
                    let dot: f64 = (0..len).map(|i| g[start + i * stride] * y[start + i * stride]).sum();
                    for i in 0..len {
                        let k = start + i * stride;
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        }
        Op::Conv1d(input, filters, bias) => {
            let (ti, tf) = (&values[input.0], &values[filters.0]);
            let (d, k) = (ti.rows(), ti.cols());
            let (nf, w) = (tf.shape()[0], tf.shape()[2]);
            let l = k - w + 1;
            if let Some(gi) = acc(grads, requires, values, *input) {
                for fi in 0..nf {
                    let grow = &g[fi * l..(fi + 1) * l];
                    for c in 0..d {
                        for o in 0..w {
                            let fv = tf.data()[(fi * d + c) * w + o];
                            let dst = &mut gi[c * k + o..c * k + o + l];
                            for (dv, &gv) in dst.iter_mut().zip(grow) {
                                *dv += fv * gv;
                            }
                        }
                    }
                }
            }
            if let Some(gf) = acc(grads, requires, values, *filters) {
                for fi in 0..nf {
                    let grow = &g[fi * l..(fi + 1) * l];
                    for c in 0..d {
                        for o in 0..w {
                            let xs = &ti.data()[c * k + o..c * k + o + l];
                            gf[(fi * d + c) * w + o] +=
                                dot(xs, grow);
                        }
                    }
                }
            }
            if let Some(b) = bias {
                if let Some(gb) = acc(grads, requires, values, *b) {
                    for fi in 0..nf {
                        gb[fi] += g[fi * l..(fi + 1) * l].iter().sum::<f64>();
                    }
                }
            }
        }
        Op::MaxPool(a, arg) => {
            let l = values[a.0].cols();
            if let Some(ga) = acc(grads, requires, values, *a) {
                for (r, (&p, &gv)) in arg.iter().zip(g).enumerate() {
                    ga[r * l + p] += gv;
                }
            }
        }
        Op::CrossEntropy(logits, gold, probs) => {
            if let Some(gl) = acc(grads, requires, values, *logits) {
                for (c, (d, &p)) in gl.iter_mut().zip(probs).enumerate() {
                    let onehot = if c == *gold { 1.0 } else { 0.0 };
                    *d += g[0] * (p - onehot);
                }
            }
        }
        Op::CrossEntropyRows(logits, golds, probs) => {
            if let Some(gl) = acc(grads, requires, values, *logits) {
                gl.iter_mut().zip(probs).for_each(|(d, &p)| *d += g[0] * p);
                let c = probs.len() / golds.len();
                for (r, &y) in golds.iter().enumerate() {
                    gl[r * c + y] -= g[0];
                }
            }
        }
        Op::AddRow(a, b) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            if let Some(gb) = acc(grads, requires, values, *b) {
                let n = gb.len();
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            let n = values[a.0].len() as f64;
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
        Op::Dot(a, b) => {
            let (ad, bd) = (values[a.0].data(), values[b.0].data());
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga.iter_mut().zip(bd).for_each(|(d, &bv)| *d += g[0] * bv);
            }
            if let Some(gb) = acc(grads, requires, values, *b) {
                gb.iter_mut().zip(ad).for_each(|(d, &av)| *d += g[0] * av);
            }
        }
        Op::Concat(parts) | Op::StackRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = values[p.0].len();
                if let Some(gp) = acc(grads, requires, values, *p) {
                    gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, &gv)| *d += gv);
                }
                offset += n;
            }
        }
        Op::Slice(a, start) => {
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &gv)| *d += gv);
            }
        }
        Op::Row(a, i) => {
            let c = values[a.0].cols();
            if let Some(ga) = acc(grads, requires, values, *a) {
                ga[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
        }
    }
}
