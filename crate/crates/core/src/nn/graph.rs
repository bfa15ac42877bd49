//! Reverse-mode automatic differentiation on a tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and accumulates adjoints. Reductions over
//! neighbor groups sum in value order, so permuting the members of a group
//! leaves the result bit-identical.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{gemm, ordered_sum, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    HardTanh(Var),
    SqrtEps(Var),
    Gather(Var, Vec<usize>),
    GroupSoftmax(Var, usize),
    GroupSum(Var, usize),
    RowSoftmax(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    MulCol(Var, Var),
    SumCols(Var),
    Sum(Var),
    StraightThrough(Var),
    SegmentSum(Var, Vec<usize>),
    SliceCols(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    nodes: Vec<Node>,
    store: Option<&'p ParamStore>,
    bound: BTreeMap<String, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            bound: BTreeMap::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            nodes: Vec::new(),
            store: Some(store),
            bound: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that is not differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf (input whose gradient is wanted).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a named parameter from the store; repeated calls share one node.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let t = self
            .store
            .expect("graph has no parameter store")
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(va.rows, vb.cols);
        gemm(va, false, vb, false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x C` bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let vb = self.value(b);
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        let mut out = self.value(x).clone();
        assert_eq!(out.cols, vb.cols, "bias width mismatch");
        for row in out.data.chunks_exact_mut(vb.cols) {
            for (o, b) in row.iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_vec(va.rows, va.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vx = self.value(x);
        let out = Tensor::from_vec(vx.rows, vx.cols, vx.data.iter().map(|v| f(*v)).collect());
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn hardtanh(&mut self, x: Var) -> Var {
        self.map(x, |v| v.clamp(-1.0, 1.0), Op::HardTanh(x))
    }

    /// `sqrt(x + 1e-12)`, smooth at zero.
    pub fn sqrt_eps(&mut self, x: Var) -> Var {
        self.map(x, |v| (v + SQRT_EPS).sqrt(), Op::SqrtEps(x))
    }

    /// Row gather: output row `r` is input row `idx[r]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let vx = self.value(x);
        let c = vx.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor::from_vec(idx.len(), c, data);
        let ng = self.ng(x);
        self.push(out, Op::Gather(x, idx), ng)
    }

    /// Softmax over consecutive groups of `group` rows, independently per column.
    pub fn group_softmax(&mut self, x: Var, group: usize) -> Var {
        let vx = self.value(x);
        assert!(group > 0 && vx.rows % group == 0, "rows not divisible by group");
        let (rows, cols) = vx.shape();
        let mut out = Tensor::zeros(rows, cols);
        let mut buf = vec![0.0; group];
        for g0 in (0..rows).step_by(group) {
            for c in 0..cols {
                let mut mx = f64::NEG_INFINITY;
                for r in 0..group {
                    mx = mx.max(vx.data[(g0 + r) * cols + c]);
                }
                for (r, b) in buf.iter_mut().enumerate() {
                    let e = (vx.data[(g0 + r) * cols + c] - mx).exp();
                    out.data[(g0 + r) * cols + c] = e;
                    *b = e;
                }
                let z = ordered_sum(&mut buf);
                for r in 0..group {
                    out.data[(g0 + r) * cols + c] /= z;
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::GroupSoftmax(x, group), ng)
    }

    /// Sum over consecutive groups of `group` rows.
    pub fn group_sum(&mut self, x: Var, group: usize) -> Var {
        let vx = self.value(x);
        assert!(group > 0 && vx.rows % group == 0, "rows not divisible by group");
        let (rows, cols) = vx.shape();
        let mut out = Tensor::zeros(rows / group, cols);
        let mut buf = vec![0.0; group];
        for g in 0..rows / group {
            for c in 0..cols {
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = vx.data[(g * group + r) * cols + c];
                }
                out.data[g * cols + c] = ordered_sum(&mut buf);
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::GroupSum(x, group), ng)
    }

    /// Softmax along each row.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = vx.clone();
        for row in out.data.chunks_exact_mut(vx.cols) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::RowSoftmax(x), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + vp.cols].copy_from_slice(vp.row(r));
            }
            off += vp.cols;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Reinterpret the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.len(), rows * cols, "reshape size mismatch");
        let out = Tensor::from_vec(rows, cols, vx.data.clone());
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Scale row `r` of `x` by `c[r]` where `c` is `N x 1`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let (vx, vc) = (self.value(x), self.value(c));
        assert_eq!((vc.rows, vc.cols), (vx.rows, 1), "mul_col shape mismatch");
        let mut out = vx.clone();
        for (row, s) in out.data.chunks_exact_mut(vx.cols).zip(&vc.data) {
            for v in row {
                *v *= s;
            }
        }
        let ng = self.ng(x) || self.ng(c);
        self.push(out, Op::MulCol(x, c), ng)
    }

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data.chunks_exact(vx.cols.max(1)).map(|r| r.iter().sum()).collect();
        let out = Tensor::from_vec(vx.rows, 1, data);
        let ng = self.ng(x);
        self.push(out, Op::SumCols(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Forward value `y`, gradient passed to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, y: Tensor) -> Var {
        assert_eq!(self.value(x).shape(), y.shape(), "straight-through shape mismatch");
        let ng = self.ng(x);
        self.push(y, Op::StraightThrough(x), ng)
    }

    /// `out[seg[r]] += x[r]` into `n_out` rows.
    pub fn segment_sum(&mut self, x: Var, seg: Vec<usize>, n_out: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(seg.len(), vx.rows, "segment map length mismatch");
        let mut out = Tensor::zeros(n_out, vx.cols);
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..vx.cols {
                out.data[s * vx.cols + c] += vx.data[r * vx.cols + c];
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SegmentSum(x, seg), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let vx = self.value(x);
        assert!(start + width <= vx.cols, "column slice out of range");
        let mut data = Vec::with_capacity(vx.rows * width);
        for r in 0..vx.rows {
            data.extend_from_slice(&vx.row(r)[start..start + width]);
        }
        let out = Tensor::from_vec(vx.rows, width, data);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let acc = |grads: &mut [Option<Tensor>], v: Var, f: &dyn Fn(&mut Tensor)| {
            if !self.ng(v) {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                let (r, c) = self.value(v).shape();
                *slot = Some(Tensor::zeros(r, c));
            }
            f(slot.as_mut().unwrap());
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|g| gemm(gy, false, vb, true, g, 1.0));
                acc(grads, *b, &|g| gemm(va, true, gy, false, g, 1.0));
            }
            Op::AddBias(x, b) => {
                acc(grads, *x, &|g| g.add_assign(gy));
                acc(grads, *b, &|g| {
                    for row in gy.data.chunks_exact(gy.cols) {
                        for (o, v) in g.data.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(grads, *a, &|g| g.add_assign(gy));
                acc(grads, *b, &|g| g.add_assign(gy));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|g| g.add_assign(gy));
                acc(grads, *b, &|g| {
                    for (o, v) in g.data.iter_mut().zip(&gy.data) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|g| {
                    for ((o, d), w) in g.data.iter_mut().zip(&gy.data).zip(&vb.data) {
                        *o += d * w;
                    }
                });
                acc(grads, *b, &|g| {
                    for ((o, d), w) in g.data.iter_mut().zip(&gy.data).zip(&va.data) {
                        *o += d * w;
                    }
                });
            }
            Op::Scale(x, s) => acc(grads, *x, &|g| {
                for (o, d) in g.data.iter_mut().zip(&gy.data) {
                    *o += d * s;
                }
            }),
            Op::Relu(x) => acc(grads, *x, &|g| {
                for ((o, d), v) in g.data.iter_mut().zip(&gy.data).zip(&y.data) {
                    if *v > 0.0 {
                        *o += d;
                    }
                }
            }),
            Op::Tanh(x) => acc(grads, *x, &|g| {
                for ((o, d), v) in g.data.iter_mut().zip(&gy.data).zip(&y.data) {
                    *o += d * (1.0 - v * v);
                }
            }),
            Op::Sigmoid(x) => acc(grads, *x, &|g| {
                for ((o, d), v) in g.data.iter_mut().zip(&gy.data).zip(&y.data) {
                    *o += d * v * (1.0 - v);
                }
            }),
            Op::HardTanh(x) => {
                let vx = self.value(*x);
                acc(grads, *x, &|g| {
                    for ((o, d), v) in g.data.iter_mut().zip(&gy.data).zip(&vx.data) {
                        if *v > -1.0 && *v < 1.0 {
                            *o += d;
                        }
                    }
                })
            }
            Op::SqrtEps(x) => acc(grads, *x, &|g| {
                for ((o, d), v) in g.data.iter_mut().zip(&gy.data).zip(&y.data) {
                    *o += d / (2.0 * v);
                }
            }),
            Op::Gather(x, idx) => acc(grads, *x, &|g| {
                let c = g.cols;
                for (r, &i) in idx.iter().enumerate() {
                    for (o, d) in g.data[i * c..(i + 1) * c].iter_mut().zip(gy.row(r)) {
                        *o += d;
                    }
                }
            }),
            Op::GroupSoftmax(x, group) => acc(grads, *x, &|g| {
                let (rows, cols) = y.shape();
                for g0 in (0..rows).step_by(*group) {
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for r in 0..*group {
                            let k = (g0 + r) * cols + c;
                            dot += gy.data[k] * y.data[k];
                        }
                        for r in 0..*group {
                            let k = (g0 + r) * cols + c;
                            g.data[k] += y.data[k] * (gy.data[k] - dot);
                        }
                    }
                }
            }),
            Op::GroupSum(x, group) => acc(grads, *x, &|g| {
                let cols = g.cols;
                for r in 0..g.rows {
                    let src = gy.row(r / group);
                    for (o, d) in g.data[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                        *o += d;
                    }
                }
            }),
            Op::RowSoftmax(x) => acc(grads, *x, &|g| {
                let cols = y.cols;
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let dr = gy.row(r);
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        g.data[r * cols + c] += yr[c] * (dr[c] - dot);
                    }
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    acc(grads, *p, &|g| {
                        for r in 0..g.rows {
                            let src = &gy.row(r)[off..off + w];
                            for (o, d) in g.data[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += d;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Reshape(x) | Op::StraightThrough(x) => acc(grads, *x, &|g| {
                for (o, d) in g.data.iter_mut().zip(&gy.data) {
                    *o += d;
                }
            }),
            Op::MulCol(x, c) => {
                let (vx, vc) = (self.value(*x), self.value(*c));
                let cols = vx.cols;
                acc(grads, *x, &|g| {
                    for r in 0..vx.rows {
                        let s = vc.data[r];
                        for k in r * cols..(r + 1) * cols {
                            g.data[k] += gy.data[k] * s;
                        }
                    }
                });
                acc(grads, *c, &|g| {
                    for r in 0..vx.rows {
                        let mut s = 0.0;
                        for k in r * cols..(r + 1) * cols {
                            s += gy.data[k] * vx.data[k];
                        }
                        g.data[r] += s;
                    }
                });
            }
            Op::SumCols(x) => acc(grads, *x, &|g| {
                let cols = g.cols;
                for r in 0..g.rows {
                    for v in &mut g.data[r * cols..(r + 1) * cols] {
                        *v += gy.data[r];
                    }
                }
            }),
            Op::Sum(x) => acc(grads, *x, &|g| {
                let d = gy.data[0];
                for v in &mut g.data {
                    *v += d;
                }
            }),
            Op::SegmentSum(x, seg) => acc(grads, *x, &|g| {
                let cols = g.cols;
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..cols {
                        g.data[r * cols + c] += gy.data[s * cols + c];
                    }
                }
            }),
            Op::SliceCols(x, start) => acc(grads, *x, &|g| {
                let (w, cols) = (gy.cols, g.cols);
                for r in 0..g.rows {
                    for c in 0..w {
                        g.data[r * cols + start + c] += gy.data[r * w + c];
                    }
                }
            }),
        }
    }
}

const SQRT_EPS: f64 = 1e-12;

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter bound on `graph`; unreached parameters get zeros.
    pub fn params(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        graph
            .bound_params()
            .map(|(name, v)| {
                let g = self.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = graph.shape(v);
                    Tensor::zeros(r, c)
                });
                (name.to_string(), g)
            })
            .collect()
    }
}
