//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records operations in creation order, so every node refers
//! only to earlier nodes and the reverse sweep is a single backward pass.

use std::sync::Arc;

use rand::Rng;

use super::mat::{gemm, Mat};
use crate::error::{Error, Result};
use crate::kan::{silu, silu_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named-by-index collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, m: Mat) -> ParamId {
        self.tensors.push(m);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|m| m.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::DimensionMismatch {
                expected: self.num_scalars(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for m in &mut self.tensors {
            let n = m.len();
            m.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(ps: &ParamSet) -> Self {
        Self {
            tensors: ps.tensors.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, f: f64) {
        for m in &mut self.tensors {
            m.data.iter_mut().for_each(|v| *v *= f);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|m| m.data.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Arc<Vec<f64>>),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Arc<Vec<usize>>),
    ScatterSum(Var, Arc<Vec<usize>>),
    Dropout(Var, Mat),
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Linear(x, w, b) => vec![*x, *w, *b],
            Op::Scale(a, _)
            | Op::ScaleRows(a, _)
            | Op::Silu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::LogSumExpRows(a)
            | Op::Gather(a, _)
            | Op::ScatterSum(a, _)
            | Op::Dropout(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Reshape(a) => vec![*a],
            Op::ConcatCols(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Per-node gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence
    /// the output.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.per_node[v.0].as_ref()
    }

    /// Gradients for every parameter of `ps` (zero where unused).
    pub fn params(&self, ps: &ParamSet) -> Grads {
        let mut g = Grads::zeros_like(ps);
        self.add_params_into(&mut g);
        g
    }

    pub fn add_params_into(&self, g: &mut Grads) {
        for &(id, v) in &self.params {
            if let Some(m) = &self.per_node[v.0] {
                g.tensors[id.0].add_assign(m);
            }
        }
    }
}

fn slot(grads: &mut [Option<Mat>], v: Var, shape: (usize, usize)) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
}

fn check_same(a: &Mat, b: &Mat, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input whose gradient can be read with
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(ps.get(id).clone());
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(x.rows, y.cols);
        gemm(x, false, y, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b))
    }

    /// `x w + b` with `b` a `1 x n` row; one pass instead of matmul then bias.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let (xv, wv, b) = (self.value(x), self.value(w), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, wv.cols), "bias shape");
        let mut data = Vec::with_capacity(xv.rows * wv.cols);
        for _ in 0..xv.rows {
            data.extend_from_slice(&b.data);
        }
        let mut out = Mat::from_vec(xv.rows, wv.cols, data);
        gemm(xv, false, wv, false, &mut out, 1.0);
        self.push(out, Op::Linear(x, w, bias))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        check_same(x, y, "elementwise");
        let data = x.data.iter().zip(&y.data).map(|(&u, &v)| f(u, v)).collect();
        let out = Mat::from_vec(x.rows, x.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |u, v| u + v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |u, v| u - v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |u, v| u * v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Multiplies row `r` of `a` by `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Var {
        let x = self.value(a);
        assert_eq!(factors.len(), x.rows, "row factor count");
        let mut out = x.clone();
        for (r, &f) in factors.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        self.push(out, Op::ScaleRows(a, factors))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(silu);
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Row-wise `log sum exp`, giving a column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows)
            .map(|r| {
                let row = x.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let out = Mat::col(data);
        self.push(out, Op::LogSumExpRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat row count");
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row_slice(r));
            }
            c0 += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// `out[i] = a[idx[i]]` (rows).
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(idx.len(), x.cols);
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(x.row_slice(j));
        }
        self.push(out, Op::Gather(a, idx))
    }

    /// `out[idx[i]] += a[i]` over `n` output rows.
    pub fn scatter_sum(&mut self, a: Var, idx: Arc<Vec<usize>>, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(idx.len(), x.rows, "scatter index count");
        let mut out = Mat::zeros(n, x.cols);
        for (i, &j) in idx.iter().enumerate() {
            for (o, v) in out.row_mut(j).iter_mut().zip(x.row_slice(i)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterSum(a, idx))
    }

    /// Inverted dropout with a mask drawn from `rng`. A zero rate is the
    /// identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let x = self.value(a);
        let keep = 1.0 / (1.0 - rate);
        let mask = Mat::from_vec(
            x.rows,
            x.cols,
            (0..x.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        );
        self.apply_mask(a, mask)
    }

    /// Multiplies by a fixed mask.
    pub fn apply_mask(&mut self, a: Var, mask: Mat) -> Var {
        let x = self.value(a);
        check_same(x, &mask, "mask");
        let data = x.data.iter().zip(&mask.data).map(|(u, m)| u * m).collect();
        let out = Mat::from_vec(x.rows, x.cols, data);
        self.push(out, Op::Dropout(a, mask))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.len() as f64;
        self.push(Mat::scalar(s), Op::MeanAll(a))
    }

    /// Same data viewed with a different row-major shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(rows * cols, x.len(), "reshape size");
        let out = Mat::from_vec(rows, cols, x.data.clone());
        self.push(out, Op::Reshape(a))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let v = self.value(out);
        if v.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward without a seed needs a scalar, got {:?}",
                v.shape()
            )));
        }
        self.backward_seeded(out, Mat::filled(v.rows, v.cols, 1.0))
    }

    /// Reverse sweep with an explicit output gradient.
    pub fn backward_seeded(&self, out: Var, seed: Mat) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::ShapeMismatch("seed shape differs from output".into()));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for v in node.op.inputs() {
                if v.0 >= i {
                    return Err(Error::CycleDetected);
                }
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            per_node: grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, $v, val($v).shape())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    gemm(g, false, val(*b), true, acc!(*a), 1.0);
                }
                if wants(*b) {
                    gemm(val(*a), true, g, false, acc!(*b), 1.0);
                }
            }
            Op::Linear(x, w, b) => {
                if wants(*x) {
                    gemm(g, false, val(*w), true, acc!(*x), 1.0);
                }
                if wants(*w) {
                    gemm(val(*x), true, g, false, acc!(*w), 1.0);
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::AddBias(a, b) => {
                if wants(*a) {
                    acc!(*a).add_assign(g);
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc!(v).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc!(*a).add_assign(g);
                }
                if wants(*b) {
                    for (o, v) in acc!(*b).data.iter_mut().zip(&g.data) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = &val(*b).data;
                    for ((o, d), y) in acc!(*a).data.iter_mut().zip(&g.data).zip(other) {
                        *o += d * y;
                    }
                }
                if wants(*b) {
                    let other = &val(*a).data;
                    for ((o, d), x) in acc!(*b).data.iter_mut().zip(&g.data).zip(other) {
                        *o += d * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    for (o, d) in acc!(*a).data.iter_mut().zip(&g.data) {
                        *o += c * d;
                    }
                }
            }
            Op::ScaleRows(a, f) => {
                if wants(*a) {
                    let ga = acc!(*a);
                    for (r, &fr) in f.iter().enumerate() {
                        for (o, d) in ga.row_mut(r).iter_mut().zip(g.row_slice(r)) {
                            *o += fr * d;
                        }
                    }
                }
            }
            Op::Silu(a) => {
                if wants(*a) {
                    let x = &val(*a).data;
                    for ((o, d), &xv) in acc!(*a).data.iter_mut().zip(&g.data).zip(x) {
                        *o += d * silu_grad(xv);
                    }
                }
            }
            Op::Sigmoid(a) | Op::Exp(a) => {
                if wants(*a) {
                    let is_sig = matches!(node.op, Op::Sigmoid(_));
                    for ((o, d), &y) in acc!(*a).data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *o += d * if is_sig { y * (1.0 - y) } else { y };
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let ga = acc!(*a);
                    for r in 0..x.rows {
                        let (gr, lse) = (g.data[r], node.value.data[r]);
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (o, &xv) in ga.row_mut(r).iter_mut().zip(x.row_slice(r)) {
                            *o += gr * (xv - lse).exp();
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = val(p).cols;
                    if wants(p) {
                        let gp = acc!(p);
                        for r in 0..g.rows {
                            for (o, d) in gp.row_mut(r).iter_mut().zip(&g.row_slice(r)[c0..c0 + w]) {
                                *o += d;
                            }
                        }
                    }
                    c0 += w;
                }
            }
            Op::Gather(a, idx) => {
                if wants(*a) {
                    let ga = acc!(*a);
                    for (i, &j) in idx.iter().enumerate() {
                        for (o, d) in ga.row_mut(j).iter_mut().zip(g.row_slice(i)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::ScatterSum(a, idx) => {
                if wants(*a) {
                    let ga = acc!(*a);
                    for (i, &j) in idx.iter().enumerate() {
                        for (o, d) in ga.row_mut(i).iter_mut().zip(g.row_slice(j)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if wants(*a) {
                    for ((o, d), m) in acc!(*a).data.iter_mut().zip(&g.data).zip(&mask.data) {
                        *o += d * m;
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    for (o, d) in acc!(*a).data.iter_mut().zip(&g.data) {
                        *o += d;
                    }
                }
            }
            Op::SumAll(a) | Op::MeanAll(a) => {
                if wants(*a) {
                    let ga = acc!(*a);
                    let d = if matches!(node.op, Op::MeanAll(_)) {
                        g.data[0] / ga.len() as f64
                    } else {
                        g.data[0]
                    };
                    ga.data.iter_mut().for_each(|o| *o += d);
                }
            }
        }
    }
}
