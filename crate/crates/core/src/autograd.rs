//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Leaves are
//! either trainable (`param`) or constant; `detach` re-enters a value as a
//! constant so nothing upstream of it can receive gradient.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{self, ConvGeom, Scalar, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv3d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    MaxPool { x: usize, arg: Vec<u32> },
    Resize { x: usize, from: [usize; 3] },
    Concat { a: usize, b: usize },
    GlobalAvgPool { x: usize },
    Linear { x: usize, w: usize, b: Option<usize> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Sum { x: usize },
    Mean { x: usize },
    Softmax { x: usize },
    TemporalDiff { x: usize, axis: usize },
    Select { x: usize, rows: Vec<usize> },
    Reshape { x: usize },
    Pad { x: usize, before: [usize; 3], size: [usize; 3] },
    Crop { x: usize, before: [usize; 3], after: [usize; 3] },
    CrossEntropy { logits: usize, labels: Vec<usize> },
    BceWithLogits { logits: usize, target: usize },
    Mse { a: usize, b: usize },
    Jsd { p: usize, q: usize },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Node ids are assigned in creation order, which is a topological order.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape if nothing reached it.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape().to_vec()))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn unary(&self, x: usize, value: Tensor<T>, op: Op) -> Var<'_, T> {
        let ng = self.needs(x);
        self.push(value, op, ng)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor<T>, op: Op) -> Var<'_, T> {
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape().to_vec(), T::one()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: usize, t: Tensor<T>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let val = |i: usize| nodes[i].value.clone();
            let ng = |i: usize| nodes[i].needs_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv3d { x, w, b, geom } => {
                    let (gx, gw, gb) = tensor::conv3d_backward(&val(*x), &val(*w), geom, &g, ng(*x));
                    if let Some(gx) = gx {
                        acc(*x, gx);
                    }
                    acc(*w, gw);
                    if let Some(b) = b {
                        acc(*b, gb);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let s = T::lit(*slope);
                    let xv = val(*x);
                    let data = xv.data().iter().zip(g.data()).map(|(&xi, &gi)| if xi > T::zero() { gi } else { gi * s }).collect();
                    acc(*x, Tensor::from_vec(g.shape().to_vec(), data));
                }
                Op::Sigmoid { x } => {
                    let y = &node.value;
                    let data = y.data().iter().zip(g.data()).map(|(&yi, &gi)| gi * yi * (T::one() - yi)).collect();
                    acc(*x, Tensor::from_vec(g.shape().to_vec(), data));
                }
                Op::MaxPool { x, arg } => {
                    let mut gx = Tensor::zeros(val(*x).shape().to_vec());
                    for (&i, &gi) in arg.iter().zip(g.data()) {
                        gx.data_mut()[i as usize] += gi;
                    }
                    acc(*x, gx);
                }
                Op::Resize { x, from } => {
                    let mut t = g;
                    for axis in (2..5).rev() {
                        t = tensor::resize_axis_backward(&t, axis, from[axis - 2]);
                    }
                    acc(*x, t);
                }
                Op::Concat { a, b } => {
                    let (av, bv) = (val(*a), val(*b));
                    let (ga, gb) = split_channels(&g, av.shape()[1], bv.shape()[1]);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::GlobalAvgPool { x } => {
                    let xs = val(*x).shape().to_vec();
                    let vol: usize = xs[2..].iter().product();
                    let inv = T::lit(1.0 / vol as f64);
                    let mut data = Vec::with_capacity(vol * g.len());
                    for &gi in g.data() {
                        data.extend(std::iter::repeat_n(gi * inv, vol));
                    }
                    acc(*x, Tensor::from_vec(xs, data));
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, i) = (xv.shape()[0], xv.shape()[1]);
                    let o = wv.shape()[0];
                    if ng(*x) {
                        acc(*x, matmul(&g, false, &wv, false, n, o, i));
                    }
                    acc(*w, matmul(&g, true, &xv, false, o, n, i));
                    if let Some(b) = b {
                        let mut gb = vec![T::zero(); o];
                        for row in g.data().chunks(o).take(n) {
                            for (acc_c, &gc) in gb.iter_mut().zip(row) {
                                *acc_c += gc;
                            }
                        }
                        acc(*b, Tensor::from_vec(vec![o], gb));
                    }
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|v| -v));
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.zip_map(&bv, |gi, bi| gi * bi));
                    acc(*b, g.zip_map(&av, |gi, ai| gi * ai));
                }
                Op::Scale { x, c } => {
                    let c = T::lit(*c);
                    acc(*x, g.map(|v| v * c));
                }
                Op::Sum { x } => {
                    let gi = g.item();
                    acc(*x, Tensor::full(val(*x).shape().to_vec(), gi));
                }
                Op::Mean { x } => {
                    let xv = val(*x);
                    let gi = g.item() / T::lit(xv.len() as f64);
                    acc(*x, Tensor::full(xv.shape().to_vec(), gi));
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let k = *y.shape().last().unwrap();
                    let mut data = vec![T::zero(); y.len()];
                    for r in 0..y.len() / k {
                        let yr = &y.data()[r * k..(r + 1) * k];
                        let gr = &g.data()[r * k..(r + 1) * k];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..k {
                            data[r * k + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(*x, Tensor::from_vec(y.shape().to_vec(), data));
                }
                Op::TemporalDiff { x, axis } => {
                    let xs = val(*x).shape().to_vec();
                    acc(*x, temporal_diff_backward(&g, &xs, *axis));
                }
                Op::Select { x, rows } => {
                    let xv = val(*x);
                    let row = xv.row_len();
                    let mut gx = Tensor::zeros(xv.shape().to_vec());
                    for (j, &r) in rows.iter().enumerate() {
                        let src = &g.data()[j * row..(j + 1) * row];
                        for (d, &s) in gx.data_mut()[r * row..(r + 1) * row].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    acc(*x, gx);
                }
                Op::Reshape { x } => {
                    let xs = val(*x).shape().to_vec();
                    acc(*x, g.reshape(xs));
                }
                Op::Pad { x, before, size } => {
                    acc(*x, tensor::crop3d(&g, *before, *size));
                }
                Op::Crop { x, before, after } => {
                    acc(*x, tensor::pad3d(&g, *before, *after));
                }
                Op::CrossEntropy { logits, labels } => {
                    let z = val(*logits);
                    let k = z.shape()[1];
                    let n = labels.len();
                    let scale = g.item() / T::lit(n as f64);
                    let mut data = softmax_rows(&z).into_data();
                    for (r, &y) in labels.iter().enumerate() {
                        data[r * k + y] -= T::one();
                    }
                    for v in &mut data {
                        *v *= scale;
                    }
                    acc(*logits, Tensor::from_vec(z.shape().to_vec(), data));
                }
                Op::BceWithLogits { logits, target } => {
                    let (z, t) = (val(*logits), val(*target));
                    let scale = g.item() / T::lit(z.len() as f64);
                    acc(*logits, z.zip_map(&t, |zi, ti| (sigmoid(zi) - ti) * scale));
                    if ng(*target) {
                        acc(*target, z.map(|zi| -zi * scale));
                    }
                }
                Op::Mse { a, b } => {
                    let (av, bv) = (val(*a), val(*b));
                    let scale = g.item() * T::lit(2.0 / av.len() as f64);
                    let diff = av.zip_map(&bv, |x, y| (x - y) * scale);
                    if ng(*b) {
                        acc(*b, diff.map(|v| -v));
                    }
                    acc(*a, diff);
                }
                Op::Jsd { p, q } => {
                    let (pv, qv) = (val(*p), val(*q));
                    let rows = pv.len() / pv.shape().last().copied().unwrap_or(1);
                    let scale = g.item() * T::lit(0.5 / rows as f64);
                    let half_log_ratio = |a: T, b: T| {
                        let tiny = T::min_positive_value();
                        let a = a.max(tiny);
                        ((a + a) / (a + b).max(tiny)).ln() * scale
                    };
                    if ng(*q) {
                        acc(*q, qv.zip_map(&pv, half_log_ratio));
                    }
                    acc(*p, pv.zip_map(&qv, half_log_ratio));
                }
            }
        }
        Gradients { grads }
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_rows<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let k = *z.shape().last().expect("softmax of a scalar");
    let mut out = z.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::from_vec(z.shape().to_vec(), out)
}

fn split_channels<T: Scalar>(g: &Tensor<T>, ca: usize, cb: usize) -> (Tensor<T>, Tensor<T>) {
    let s = g.shape();
    let vol: usize = s[2..].iter().product();
    let mut a = Vec::with_capacity(s[0] * ca * vol);
    let mut b = Vec::with_capacity(s[0] * cb * vol);
    for n in 0..s[0] {
        let base = n * (ca + cb) * vol;
        a.extend_from_slice(&g.data()[base..base + ca * vol]);
        b.extend_from_slice(&g.data()[base + ca * vol..base + (ca + cb) * vol]);
    }
    let mut sa = s.to_vec();
    sa[1] = ca;
    let mut sb = s.to_vec();
    sb[1] = cb;
    (Tensor::from_vec(sa, a), Tensor::from_vec(sb, b))
}

/// Plain `m×k · k×n` product with optional transposition of either operand.
fn matmul<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, m: usize, k: usize, n: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); m * n];
    for r in 0..m {
        for c in 0..n {
            let mut s = T::zero();
            for j in 0..k {
                let av = if ta { a.data()[j * m + r] } else { a.data()[r * k + j] };
                let bv = if tb { b.data()[c * k + j] } else { b.data()[j * n + c] };
                s += av * bv;
            }
            out[r * n + c] = s;
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// `out[f] = x[f+1] - x[f]` along `axis`.
pub fn temporal_diff<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let s = x.shape();
    let f = s[axis];
    assert!(f >= 2, "temporal difference needs at least two frames");
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * (f - 1) * inner);
    for o in 0..outer {
        let base = o * f * inner;
        for t in 0..f - 1 {
            let a = &x.data()[base + t * inner..base + (t + 1) * inner];
            let b = &x.data()[base + (t + 1) * inner..base + (t + 2) * inner];
            out.extend(a.iter().zip(b).map(|(&a, &b)| b - a));
        }
    }
    let mut shape = s.to_vec();
    shape[axis] = f - 1;
    Tensor::from_vec(shape, out)
}

fn temporal_diff_backward<T: Scalar>(g: &Tensor<T>, xs: &[usize], axis: usize) -> Tensor<T> {
    let f = xs[axis];
    let outer: usize = xs[..axis].iter().product();
    let inner: usize = xs[axis + 1..].iter().product();
    let mut gx = vec![T::zero(); outer * f * inner];
    for o in 0..outer {
        for t in 0..f - 1 {
            let src = &g.data()[(o * (f - 1) + t) * inner..(o * (f - 1) + t + 1) * inner];
            let base = o * f * inner;
            for q in 0..inner {
                gx[base + (t + 1) * inner + q] += src[q];
                gx[base + t * inner + q] -= src[q];
            }
        }
    }
    Tensor::from_vec(xs.to_vec(), gx)
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Re-enters this value as a constant; gradients stop here.
    pub fn detach(self) -> Self {
        let v = (*self.value()).clone();
        self.graph.constant(v)
    }

    pub fn conv3d(self, w: Self, b: Option<Self>, stride: [usize; 3], pad: [usize; 3]) -> Self {
        let xv = self.value();
        let wv = w.value();
        let bv = b.map(|b| b.value());
        let (out, geom) = tensor::conv3d(&xv, &wv, bv.as_deref(), stride, pad);
        let ng = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.graph.push(out, Op::Conv3d { x: self.id, w: w.id, b: b.map(|b| b.id), geom }, ng)
    }

    pub fn leaky_relu(self, slope: f64) -> Self {
        let s = T::lit(slope);
        let out = self.value().map(|v| if v > T::zero() { v } else { v * s });
        self.graph.unary(self.id, out, Op::LeakyRelu { x: self.id, slope })
    }

    pub fn sigmoid(self) -> Self {
        let out = self.value().map(sigmoid);
        self.graph.unary(self.id, out, Op::Sigmoid { x: self.id })
    }

    pub fn max_pool3d(self, k: [usize; 3]) -> Self {
        let (out, arg) = tensor::max_pool3d(&self.value(), k);
        self.graph.unary(self.id, out, Op::MaxPool { x: self.id, arg })
    }

    /// Trilinear resize of the three trailing axes.
    pub fn resize3d(self, to: [usize; 3]) -> Self {
        let v = self.value();
        let s = v.shape();
        let from = [s[2], s[3], s[4]];
        let mut t = (*v).clone();
        for axis in 2..5 {
            t = tensor::resize_axis(&t, axis, to[axis - 2]);
        }
        self.graph.unary(self.id, t, Op::Resize { x: self.id, from })
    }

    /// Concatenation along the channel axis of two `N×C×...` tensors.
    pub fn concat(self, other: Self) -> Self {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[2..], sb[2..], "concat spatial mismatch");
        let vol: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..sa[0] {
            data.extend_from_slice(&a.data()[n * ca * vol..(n + 1) * ca * vol]);
            data.extend_from_slice(&b.data()[n * cb * vol..(n + 1) * cb * vol]);
        }
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        self.graph.binary(self.id, other.id, Tensor::from_vec(shape, data), Op::Concat { a: self.id, b: other.id })
    }

    pub fn global_avg_pool(self) -> Self {
        let v = self.value();
        let s = v.shape();
        let vol: usize = s[2..].iter().product();
        let data = v.data().chunks(vol).map(|c| c.iter().copied().sum::<T>() / T::lit(vol as f64)).collect();
        self.graph.unary(self.id, Tensor::from_vec(vec![s[0], s[1]], data), Op::GlobalAvgPool { x: self.id })
    }

    /// `x·wᵀ + b` with `x: N×I`, `w: O×I`.
    pub fn linear(self, w: Self, b: Option<Self>) -> Self {
        let (xv, wv) = (self.value(), w.value());
        let (n, i) = (xv.shape()[0], xv.shape()[1]);
        let o = wv.shape()[0];
        assert_eq!(wv.shape()[1], i, "linear input width");
        let mut out = matmul(&xv, false, &wv, true, n, i, o);
        if let Some(b) = b {
            let bv = b.value();
            for r in 0..n {
                for c in 0..o {
                    out.data_mut()[r * o + c] += bv.data()[c];
                }
            }
        }
        let ng = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.graph.push(out, Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) }, ng)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Self) -> Self {
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.binary(self.id, other.id, out, Op::Add { a: self.id, b: other.id })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Self) -> Self {
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.binary(self.id, other.id, out, Op::Sub { a: self.id, b: other.id })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Self) -> Self {
        let out = self.value().zip_map(&other.value(), |a, b| a * b);
        self.graph.binary(self.id, other.id, out, Op::Mul { a: self.id, b: other.id })
    }

    pub fn scale(self, c: f64) -> Self {
        let ct = T::lit(c);
        let out = self.value().map(|v| v * ct);
        self.graph.unary(self.id, out, Op::Scale { x: self.id, c })
    }

    pub fn sum(self) -> Self {
        let out = Tensor::scalar(self.value().sum());
        self.graph.unary(self.id, out, Op::Sum { x: self.id })
    }

    pub fn mean(self) -> Self {
        let v = self.value();
        let out = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        self.graph.unary(self.id, out, Op::Mean { x: self.id })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Self {
        let out = softmax_rows(&self.value());
        self.graph.unary(self.id, out, Op::Softmax { x: self.id })
    }

    /// Forward difference along `axis`: `out[f] = x[f+1] - x[f]`.
    pub fn temporal_diff(self, axis: usize) -> Self {
        let out = temporal_diff(&self.value(), axis);
        self.graph.unary(self.id, out, Op::TemporalDiff { x: self.id, axis })
    }

    /// Rows of axis 0.
    pub fn select(self, rows: &[usize]) -> Self {
        let out = self.value().select_rows(rows);
        self.graph.unary(self.id, out, Op::Select { x: self.id, rows: rows.to_vec() })
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let out = (*self.value()).clone().reshape(shape.to_vec());
        self.graph.unary(self.id, out, Op::Reshape { x: self.id })
    }

    /// Zero-pads the three trailing axes.
    pub fn pad3d(self, before: [usize; 3], after: [usize; 3]) -> Self {
        let v = self.value();
        let s = v.shape();
        let size = [s[2], s[3], s[4]];
        let out = tensor::pad3d(&v, before, after);
        self.graph.unary(self.id, out, Op::Pad { x: self.id, before, size })
    }

    /// Keeps a `size` window of the three trailing axes starting at `before`.
    pub fn crop3d(self, before: [usize; 3], size: [usize; 3]) -> Self {
        let v = self.value();
        let s = v.shape();
        let after = [0, 1, 2].map(|a| s[a + 2] - before[a] - size[a]);
        let out = tensor::crop3d(&v, before, size);
        self.graph.unary(self.id, out, Op::Crop { x: self.id, before, after })
    }

    /// Mean softmax cross-entropy of `N×K` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Self {
        let z = self.value();
        let k = z.shape()[1];
        assert_eq!(z.shape()[0], labels.len(), "one label per row");
        let mut total = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = &z.data()[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            total += lse - row[y];
        }
        let out = Tensor::scalar(total / T::lit(labels.len() as f64));
        self.graph.unary(self.id, out, Op::CrossEntropy { logits: self.id, labels: labels.to_vec() })
    }

    /// Mean binary cross-entropy of `sigmoid(self)` against `target`.
    pub fn bce_with_logits(self, target: Self) -> Self {
        let (z, t) = (self.value(), target.value());
        assert_eq!(z.shape(), t.shape(), "bce shape mismatch");
        let total: T = z
            .data()
            .iter()
            .zip(t.data())
            .map(|(&zi, &ti)| zi.max(T::zero()) - zi * ti + (T::one() + (-zi.abs()).exp()).ln())
            .sum();
        let out = Tensor::scalar(total / T::lit(z.len() as f64));
        self.graph.binary(self.id, target.id, out, Op::BceWithLogits { logits: self.id, target: target.id })
    }

    /// Mean squared error over all elements.
    pub fn mse(self, other: Self) -> Self {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
        let total: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(total / T::lit(a.len() as f64));
        self.graph.binary(self.id, other.id, out, Op::Mse { a: self.id, b: other.id })
    }

    /// Mean over rows of the Jensen-Shannon divergence between row distributions.
    pub fn jsd(self, other: Self) -> Self {
        let (p, q) = (self.value(), other.value());
        assert_eq!(p.shape(), q.shape(), "jsd shape mismatch");
        let k = *p.shape().last().unwrap();
        let rows = p.len() / k;
        let half = T::lit(0.5);
        let term = |a: T, b: T| if a > T::zero() { a * ((a + a) / (a + b)).ln() } else { T::zero() };
        let total: T = p.data().iter().zip(q.data()).map(|(&a, &b)| half * term(a, b) + half * term(b, a)).sum();
        let out = Tensor::scalar(total / T::lit(rows as f64));
        self.graph.binary(self.id, other.id, out, Op::Jsd { p: self.id, q: other.id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Checks the tape gradient of `f` at `x0` against central differences.
    fn check(shape: &[usize], seed: u64, f: impl Fn(&Graph<f64>, Var<'_, f64>) -> Tensor<f64>) {
        let x0 = Tensor::from_vec(shape.to_vec(), pseudo(shape.iter().product(), seed));
        let g = Graph::new();
        let x = g.param(x0.clone());
        let _ = f(&g, x);
        let root = Var { graph: &g, id: g.len() - 1 };
        let grads = g.backward(root);
        let analytic = grads.get_or_zeros(x);
        let h = 1e-5;
        for i in 0..x0.len() {
            let eval = |d: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += d;
                let g2 = Graph::new();
                let v = g2.param(xp);
                f(&g2, v).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() <= 1e-6 + 1e-5 * fd.abs().max(a.abs()), "coord {i}: fd {fd} vs tape {a}");
        }
    }

    #[test]
    fn conv_pool_resize_chain() {
        check(&[1, 2, 4, 4, 4], 1, |g, x| {
            let w = g.constant(Tensor::from_vec(vec![3, 2, 3, 3, 3], pseudo(162, 2)));
            let y = x.conv3d(w, None, [1, 1, 1], [1, 1, 1]).leaky_relu(0.1).max_pool3d([2, 2, 2]);
            let z = y.resize3d([4, 4, 4]).sigmoid();
            let t = g.constant(Tensor::from_vec(z.shape(), pseudo(z.value().len(), 3)));
            (*z.mse(t).value()).clone()
        });
    }

    #[test]
    fn conv_weight_gradient() {
        let x = Tensor::from_vec(vec![2, 2, 3, 4, 4], pseudo(192, 4));
        check(&[3, 2, 3, 3, 3], 5, |g, w| {
            let xv = g.constant(x.clone());
            let y = xv.conv3d(w, None, [2, 2, 2], [1, 1, 1]);
            (*y.mul(y).mean().value()).clone()
        });
    }

    #[test]
    fn linear_softmax_jsd() {
        let q = softmax_rows(&Tensor::from_vec(vec![2, 4], pseudo(8, 6)));
        check(&[2, 5], 7, |g, x| {
            let w = g.constant(Tensor::from_vec(vec![4, 5], pseudo(20, 8)));
            let b = g.constant(Tensor::from_vec(vec![4], pseudo(4, 9)));
            let p = x.linear(w, Some(b)).softmax();
            (*p.jsd(g.constant(q.clone())).value()).clone()
        });
    }

    #[test]
    fn jsd_stays_finite_on_subnormal_probabilities() {
        let tiny = f32::from_bits(1);
        let g = Graph::new();
        let p = g.param(Tensor::from_vec(vec![1, 3], vec![tiny, 0.5, 0.5 - tiny]));
        let q = g.constant(Tensor::from_vec(vec![1, 3], vec![0.0, 0.25, 0.75]));
        let d = p.jsd(q);
        assert!(d.value().item().is_finite());
        let grads = g.backward(d).get_or_zeros(p);
        assert!(grads.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_and_bce() {
        check(&[3, 4], 10, |_, x| (*x.cross_entropy(&[0, 3, 1]).value()).clone());
        let t = Tensor::from_vec(vec![2, 6], pseudo(12, 11).into_iter().map(|v| (v > 0.0) as u8 as f64).collect());
        check(&[2, 6], 12, |g, x| (*x.bce_with_logits(g.constant(t.clone())).value()).clone());
    }

    #[test]
    fn diff_select_concat_pad() {
        check(&[2, 1, 3, 2, 2], 13, |g, x| {
            let other = g.constant(Tensor::from_vec(vec![2, 1, 3, 2, 2], pseudo(24, 14)));
            let c = x.concat(other).pad3d([1, 0, 1], [0, 1, 1]).crop3d([1, 0, 0], [3, 2, 3]);
            let d = c.temporal_diff(2).select(&[1, 0, 1]);
            let p = c.global_avg_pool();
            (*d.mul(d).sum().add(p.sum()).value()).clone()
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]));
        let y = x.scale(2.0).detach();
        let loss = y.mul(y).sum();
        let grads = g.backward(loss);
        assert!(grads.get(x).is_none());
        assert!(!loss.requires_grad());
    }
}
