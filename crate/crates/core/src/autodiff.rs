//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive records its output value and the indices of its inputs.
//! [`Tape::backward`] walks the tape in reverse and returns the gradient of a
//! scalar root with respect to every parameter that was read. Shape errors in
//! the primitives are programming errors and panic.

use std::collections::BTreeMap;

use crate::param::{ParamId, ParamSet};
use crate::tensor::{softmax_rows, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    Cosine(Var, Var),
    MaskedFill(Var, Vec<bool>),
    Softmax(Var),
    Relu(Var),
    Sigmoid(Var),
    ClampMin(Var, f64),
    SliceCols(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient buffer for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum GradBuf {
    Dense(Tensor),
    /// Row-sparse gradient, used for embedding lookups.
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Gradients of a scalar with respect to the parameters it depends on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, GradBuf>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&GradBuf> {
        self.map.get(&id)
    }

    /// Dense view of the gradient for `id`, zeros if the parameter was unused.
    pub fn dense(&self, id: ParamId, params: &ParamSet) -> Tensor {
        let shape = params.get(id).tensor.shape();
        let mut out = Tensor::zeros(shape);
        match self.map.get(&id) {
            None => {}
            Some(GradBuf::Dense(t)) => out = t.clone(),
            Some(GradBuf::Rows { cols, rows }) => {
                for (&r, vals) in rows {
                    out.values_mut()[r * cols..(r + 1) * cols].copy_from_slice(vals);
                }
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &GradBuf)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    fn add_dense(&mut self, id: ParamId, grad: &Tensor) {
        match self.map.get_mut(&id) {
            Some(GradBuf::Dense(t)) => {
                for (a, b) in t.values_mut().iter_mut().zip(grad.values()) {
                    *a += b;
                }
            }
            Some(GradBuf::Rows { .. }) => panic!("parameter used both densely and by lookup"),
            None => {
                self.map.insert(id, GradBuf::Dense(grad.clone()));
            }
        }
    }

    fn add_rows(&mut self, id: ParamId, ids: &[usize], grad: &Tensor) {
        let cols = grad.cols();
        let entry = self.map.entry(id).or_insert_with(|| GradBuf::Rows {
            cols,
            rows: BTreeMap::new(),
        });
        let GradBuf::Rows { rows, .. } = entry else {
            panic!("parameter used both densely and by lookup");
        };
        for (pos, &row) in ids.iter().enumerate() {
            let acc = rows.entry(row).or_insert_with(|| vec![0.0; cols]);
            for (a, b) in acc.iter_mut().zip(grad.row(pos)) {
                *a += b;
            }
        }
    }
}

impl ParamSet {
    /// Adds `scale * grads` into the gradient slots, skipping frozen rows.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, buf) in grads.iter() {
            let param = self.get_mut(id);
            let cols = param.tensor.cols();
            match buf {
                GradBuf::Dense(t) => {
                    for (i, (a, b)) in param
                        .gradient
                        .values_mut()
                        .iter_mut()
                        .zip(t.values())
                        .enumerate()
                    {
                        if !param.frozen_rows.contains(&(i / cols.max(1))) {
                            *a += scale * b;
                        }
                    }
                }
                GradBuf::Rows { rows, .. } => {
                    for (&r, vals) in rows {
                        if param.frozen_rows.contains(&r) {
                            continue;
                        }
                        let slot = &mut param.gradient.values_mut()[r * cols..(r + 1) * cols];
                        for (a, b) in slot.iter_mut().zip(vals) {
                            *a += scale * b;
                        }
                    }
                }
            }
        }
    }
}

/// Records a computation over values and parameters for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).tensor.clone();
        self.push(value, Op::Param(id))
    }

    /// Selects rows `ids` of a `[vocab, dim]` parameter.
    pub fn gather(&mut self, id: ParamId, ids: &[usize]) -> Var {
        let table = &self.params.get(id).tensor;
        let cols = table.cols();
        let mut values = Vec::with_capacity(ids.len() * cols);
        for &row in ids {
            values.extend_from_slice(table.row(row));
        }
        let value = Tensor::new(vec![ids.len(), cols], values).expect("gather shape");
        self.push(
            value,
            Op::Gather {
                param: id,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(
            x.cols(),
            y.rows(),
            "matmul {:?} x {:?}",
            x.shape(),
            y.shape()
        );
        let value = matmul_nn(x, y);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = transpose(self.value(a));
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mode = broadcast_mode(self.value(a), self.value(b));
        let value = zip_broadcast(self.value(a), self.value(b), mode, |x, y| x + y);
        self.push(value, Op::Add(a, b, mode))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mode = broadcast_mode(self.value(a), self.value(b));
        let value = zip_broadcast(self.value(a), self.value(b), mode, |x, y| x * y);
        self.push(value, Op::Mul(a, b, mode))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = map(self.value(a), |x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = map(self.value(a), |x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::ln);
        self.push(value, Op::Ln(a))
    }

    /// Sums over axis 0: `[rows, cols] -> [1, cols]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let mut out = vec![0.0; cols];
        for r in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let value = Tensor::new(vec![1, cols], out).unwrap();
        self.push(value, Op::SumRows(a))
    }

    /// Sums over axis 1: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let value = Tensor::new(vec![x.rows(), 1], out).unwrap();
        self.push(value, Op::SumCols(a))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        match axis {
            0 => self.sum_rows(a),
            1 => self.sum_cols(a),
            _ => panic!("sum over axis {axis} of a matrix"),
        }
    }

    /// Sums every element into a `[1, 1]` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let x = self.value(p);
                assert_eq!(x.rows(), rows, "concat row mismatch");
                values.extend_from_slice(x.row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], values).unwrap();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
    /// Pairs involving a zero-norm row are defined as 0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let value = cosine_matrix(self.value(a), self.value(b));
        self.push(value, Op::Cosine(a, b))
    }

    /// Replaces entries where `mask` is true by `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.numel(), "mask size");
        let mut value = x.clone();
        for (v, &m) in value.values_mut().iter_mut().zip(mask) {
            if m {
                *v = fill;
            }
        }
        self.push(value, Op::MaskedFill(a, mask.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// `max(a, floor)` elementwise.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = map(self.value(a), |x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(
            start < end && end <= x.cols(),
            "slice {start}..{end} of {:?}",
            x.shape()
        );
        let value = Tensor::from_fn(x.rows(), end - start, |r, c| x.get(r, start + c));
        self.push(value, Op::SliceCols(a, start))
    }

    /// Gradient of the scalar `root` with respect to every parameter read on this tape.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).numel(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add_dense(*id, &g),
                Op::Gather { param, ids } => out.add_rows(*param, ids, &g),
                Op::MatMul(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let ga = matmul_nt(&g, w);
                    let gb = matmul_tn(x, &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, transpose(&g)),
                Op::Add(a, b, mode) => {
                    let gb = reduce_broadcast(&g, self.value(*b), *mode);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b, mode) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let ga = zip_broadcast(&g, w, *mode, |gv, wv| gv * wv);
                    let gx = zip_broadcast(&g, x, Broadcast::Same, |gv, xv| gv * xv);
                    let gb = reduce_broadcast(&gx, w, *mode);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, map(&g, |v| v * f)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Exp(a) => {
                    let ga = zip_broadcast(&g, y, Broadcast::Same, |gv, yv| gv * yv);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = zip_broadcast(&g, self.value(*a), Broadcast::Same, |gv, xv| gv / xv);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_fn(x.rows(), x.cols(), |_, c| g.values()[c]);
                    accumulate(&mut grads, *a, reshape_like(ga, x));
                }
                Op::SumCols(a) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_fn(x.rows(), x.cols(), |r, _| g.values()[r]);
                    accumulate(&mut grads, *a, reshape_like(ga, x));
                }
                Op::SumAll(a) => {
                    let ga = Tensor::full(self.value(*a).shape(), g.item());
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let x = self.value(p);
                        let w = x.cols();
                        let gp = Tensor::from_fn(x.rows(), w, |r, c| g.get(r, offset + c));
                        accumulate(&mut grads, p, reshape_like(gp, x));
                        offset += w;
                    }
                }
                Op::Cosine(a, b) => {
                    let (ga, gb) = cosine_backward(self.value(*a), self.value(*b), y, &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaskedFill(a, mask) => {
                    let mut ga = g;
                    for (v, &m) in ga.values_mut().iter_mut().zip(mask) {
                        if m {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let cols = y.cols();
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..cols {
                            ga.set(r, c, yr[c] * (gr[c] - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_broadcast(&g, self.value(*a), Broadcast::Same, |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_broadcast(&g, y, Broadcast::Same, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut grads, *a, ga);
                }
                Op::ClampMin(a, floor) => {
                    let ga = zip_broadcast(&g, self.value(*a), Broadcast::Same, |gv, xv| {
                        if xv > *floor {
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.shape());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        out
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

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    Tensor::new(like.shape().to_vec(), t.into_values()).unwrap()
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let values = x.values().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), values).unwrap()
}

fn broadcast_mode(a: &Tensor, b: &Tensor) -> Broadcast {
    if a.same_shape(b) {
        Broadcast::Same
    } else if b.numel() == 1 {
        Broadcast::Scalar
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Broadcast::Row
    } else {
        panic!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape())
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols().max(1);
    let values = a
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = match mode {
                Broadcast::Same => b.values()[i],
                Broadcast::Scalar => b.values()[0],
                Broadcast::Row => b.values()[i % cols],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(a.shape().to_vec(), values).unwrap()
}

fn reduce_broadcast(g: &Tensor, target: &Tensor, mode: Broadcast) -> Tensor {
    match mode {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::full(target.shape(), g.values().iter().sum()),
        Broadcast::Row => {
            let cols = g.cols();
            let mut out = vec![0.0; cols];
            for r in 0..g.rows() {
                for (o, v) in out.iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            Tensor::new(target.shape().to_vec(), out).unwrap()
        }
    }
}

fn transpose(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.cols(), x.rows(), |r, c| x.get(c, r))
}

/// `a · b`
fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (av, bv) = (a.values(), b.values());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = av[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, w) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                *o += x * w;
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// `a · bᵀ`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out[i * n + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    let _ = k;
    Tensor::new(vec![m, n], out).unwrap()
}

/// `aᵀ · b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let ar = a.row(p);
        let br = b.row(p);
        for i in 0..m {
            let x = ar[i];
            if x == 0.0 {
                continue;
            }
            for (o, w) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += x * w;
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

fn norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Pairwise row cosine similarity; zero-norm rows give 0.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "cosine over different widths");
    let (na, nb) = (norms(a), norms(b));
    Tensor::from_fn(a.rows(), b.rows(), |i, j| {
        if na[i] == 0.0 || nb[j] == 0.0 {
            return 0.0;
        }
        let dot: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        (dot / (na[i] * nb[j])).clamp(-1.0, 1.0)
    })
}

fn cosine_backward(a: &Tensor, b: &Tensor, c: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (na, nb) = (norms(a), norms(b));
    let d = a.cols();
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..a.rows() {
        if na[i] == 0.0 {
            continue;
        }
        for j in 0..b.rows() {
            if nb[j] == 0.0 {
                continue;
            }
            let gij = g.get(i, j);
            if gij == 0.0 {
                continue;
            }
            let cij = c.get(i, j);
            let inv = 1.0 / (na[i] * nb[j]);
            for t in 0..d {
                let (ai, bj) = (a.get(i, t), b.get(j, t));
                let da = gij * (bj * inv - cij * ai / (na[i] * na[i]));
                let db = gij * (ai * inv - cij * bj / (nb[j] * nb[j]));
                ga.set(i, t, ga.get(i, t) + da);
                gb.set(j, t, gb.get(j, t) + db);
            }
        }
    }
    (ga, gb)
}
