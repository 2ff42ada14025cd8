//! Tape of primitive operations and the reverse sweep over it.

use super::kernels::{self, ConvDims};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`]. Invalidated by [`Graph::backward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var> },
    AvgPool2(Var),
    Upsample2(Var),
    Silu(Var),
    Relu(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, means: Vec<f64>, rstds: Vec<f64> },
    Concat(Var, Var),
    ChannelAdd(Var, Var),
    BiasAdd(Var, Var),
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    /// Whether any gradient can flow into this node.
    tracked: bool,
}

/// The computation record. Nodes are appended in evaluation order, so operands always
/// precede their consumers.
#[derive(Debug, Default)]
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor as an input. Gradients are collected for it if `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let tracked = t.requires_grad;
        let mut value = t;
        value.grad = None;
        self.nodes.push(Node { value, op: Op::Leaf, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<S>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, shape: &[usize], data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        let value = Tensor::from_vec(shape, data).expect("primitive produced consistent shape");
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<(Vec<usize>, Vec<S>)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((ta.shape().to_vec(), data))
        } else if tb.numel() == 1 {
            let s = tb.item();
            Ok((ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, s)).collect()))
        } else if ta.numel() == 1 {
            let s = ta.item();
            Ok((tb.shape().to_vec(), tb.data().iter().map(|&y| f(s, y)).collect()))
        } else {
            Err(shape_err(name, &[ta.shape(), tb.shape()]))
        }
    }

    /// Elementwise sum; one operand may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(&shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(&shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(&shape, data, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let t = self.value(a);
        let (shape, data) = (t.shape().to_vec(), t.data().iter().map(|&x| x * c).collect());
        self.push(&shape, data, Op::Scale(a, c), &[a])
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), ta.data(), k as isize, 1, tb.data(), n as isize, 1, S::zero(), &mut out, n as isize, 1);
        Ok(self.push(&[m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Stride-1 convolution with zero padding `K/2`: `x [N,C,H,W]`, `w [O,C,K,K]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dims = self.conv_dims(x, w, b)?;
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), bias, &dims);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(&[dims.n, dims.o, dims.h, dims.w], out, Op::Conv2d { x, w, b }, &inputs))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Option<Var>) -> Result<ConvDims> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let bad = || shape_err("conv2d", &[sx, sw]);
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(bad());
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err("conv2d", &[sx, sw, self.shape(b)]));
            }
        }
        Ok(ConvDims { n: sx[0], c: sx[1], o: sw[0], h: sx[2], w: sx[3], k: sw[2] })
    }

    /// 2x2 average pooling; spatial extents must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(shape_err("avg_pool2", &[s]));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let quarter = S::from_f64(0.25);
        let src = t.data();
        let mut out = vec![S::zero(); nc * ho * wo];
        for p in 0..nc {
            let plane = &src[p * h * w..];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    out[(p * ho + y) * wo + xx] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
                }
            }
        }
        let shape = [s[0], s[1], ho, wo];
        Ok(self.push(&shape, out, Op::AvgPool2(x), &[x]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 {
            return Err(shape_err("upsample2", &[s]));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (2 * h, 2 * w);
        let src = t.data();
        let mut out = vec![S::zero(); nc * ho * wo];
        for p in 0..nc {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(p * ho + y) * wo + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let shape = [s[0], s[1], ho, wo];
        Ok(self.push(&shape, out, Op::Upsample2(x), &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| S::from_f64(v.as_f64() * kernels::sigmoid(v.as_f64()))).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, data, Op::Silu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, data, Op::Relu(x), &[x])
    }

    /// Group normalization with per-channel affine `gamma`, `beta` of shape `[C]`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || groups == 0 || s[1] % groups != 0 {
            return Err(shape_err("group_norm", &[&s]));
        }
        if self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(shape_err("group_norm", &[&s, self.shape(gamma), self.shape(beta)]));
        }
        let spatial = s[2..].iter().product();
        let (out, means, rstds) = kernels::group_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            s[0],
            s[1],
            spatial,
            groups,
        );
        Ok(self.push(&s, out, Op::GroupNorm { x, gamma, beta, groups, means, rstds }, &[x, gamma, beta]))
    }

    /// Concatenates along axis 1.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err("concat", &[sa, sb]));
        }
        let n = sa[0];
        let (la, lb) = (self.value(a).numel() / n, self.value(b).numel() / n);
        let mut out = Vec::with_capacity(n * (la + lb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * la..(i + 1) * la]);
            out.extend_from_slice(&self.value(b).data()[i * lb..(i + 1) * lb]);
        }
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        Ok(self.push(&shape, out, Op::Concat(a, b), &[a, b]))
    }

    /// Adds a per-sample, per-channel vector `v [N, C]` to every spatial site of `x [N, C, ...]`.
    pub fn channel_add(&mut self, x: Var, v: Var) -> Result<Var> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if sx.len() < 2 || sv != [sx[0], sx[1]] {
            return Err(shape_err("channel_add", &[sx, sv]));
        }
        let spatial: usize = sx[2..].iter().product();
        let vd = self.value(v).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &e)| e + vd[i / spatial])
            .collect();
        let shape = sx.to_vec();
        Ok(self.push(&shape, data, Op::ChannelAdd(x, v), &[x, v]))
    }

    /// Adds a per-channel bias `b [C]` to `x [N, C, ...]`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() < 2 || sb != [sx[1]] {
            return Err(shape_err("bias_add", &[sx, sb]));
        }
        let c = sx[1];
        let spatial: usize = sx[2..].iter().product();
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &e)| e + bd[(i / spatial) % c])
            .collect();
        let shape = sx.to_vec();
        Ok(self.push(&shape, data, Op::BiasAdd(x, b), &[x, b]))
    }

    /// Mean squared error, reduced to a single-element tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(shape_err("mse", &[tp.shape(), tt.shape()]));
        }
        let n = tp.numel() as f64;
        let sse: f64 = tp.data().iter().zip(tt.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
        Ok(self.push(&[1], vec![S::from_f64(sse / n)], Op::Mse(pred, target), &[pred, target]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = super::scalar::sum_f64(self.value(x).data());
        self.push(&[1], vec![S::from_f64(s)], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = super::scalar::sum_f64(t.data()) / t.numel() as f64;
        self.push(&[1], vec![S::from_f64(s)], Op::Mean(x), &[x])
    }

    /// Reverse sweep from a single-element `loss`. Returns gradients of every leaf recorded
    /// with `requires_grad`, then clears the record.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty computation record"));
        }
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward (loss must be scalar)", &[self.shape(loss)]));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.nodes.clear();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Gradient for a binary operand that may have been broadcast from a single element.
    fn reduce_to(&self, v: Var, full: Vec<S>) -> Vec<S> {
        if self.value(v).numel() == 1 && full.len() != 1 {
            vec![S::from_f64(super::scalar::sum_f64(&full))]
        } else {
            full
        }
    }

    fn broadcast_get(t: &Tensor<S>, i: usize) -> S {
        if t.numel() == 1 { t.item() } else { t.data()[i] }
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            &Op::Add(a, b) => {
                if self.tracked(a) {
                    grads_push(self, grads, a, self.reduce_to(a, g.to_vec()));
                }
                if self.tracked(b) {
                    grads_push(self, grads, b, self.reduce_to(b, g.to_vec()));
                }
            }
            &Op::Sub(a, b) => {
                if self.tracked(a) {
                    grads_push(self, grads, a, self.reduce_to(a, g.to_vec()));
                }
                if self.tracked(b) {
                    grads_push(self, grads, b, self.reduce_to(b, g.iter().map(|&v| -v).collect()));
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                if self.tracked(a) {
                    let full = g.iter().enumerate().map(|(j, &gv)| gv * Self::broadcast_get(tb, j)).collect();
                    grads_push(self, grads, a, self.reduce_to(a, full));
                }
                if self.tracked(b) {
                    let full = g.iter().enumerate().map(|(j, &gv)| gv * Self::broadcast_get(ta, j)).collect();
                    grads_push(self, grads, b, self.reduce_to(b, full));
                }
            }
            &Op::Scale(a, c) => grads_push(self, grads, a, g.iter().map(|&v| v * c).collect()),
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.tracked(a) {
                    // dA = G [m,n] * B^T [n,k]
                    let mut da = vec![S::zero(); m * k];
                    S::gemm(m, n, k, S::one(), g, n as isize, 1, tb.data(), 1, n as isize, S::zero(), &mut da, k as isize, 1);
                    grads_push(self, grads, a, da);
                }
                if self.tracked(b) {
                    // dB = A^T [k,m] * G [m,n]
                    let mut db = vec![S::zero(); k * n];
                    S::gemm(k, m, n, S::one(), ta.data(), 1, k as isize, g, n as isize, 1, S::zero(), &mut db, n as isize, 1);
                    grads_push(self, grads, b, db);
                }
            }
            &Op::Conv2d { x, w, b } => {
                let dims = self.conv_dims(x, w, b).expect("validated in forward");
                let want_b = b.is_some_and(|b| self.tracked(b));
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    &dims,
                    self.tracked(x),
                    self.tracked(w),
                    want_b,
                );
                if let Some(dx) = dx {
                    grads_push(self, grads, x, dx);
                }
                if let Some(dw) = dw {
                    grads_push(self, grads, w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    grads_push(self, grads, b, db);
                }
            }
            &Op::AvgPool2(x) => {
                let s = self.shape(x);
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let (ho, wo) = (h / 2, w / 2);
                let quarter = S::from_f64(0.25);
                let mut dx = vec![S::zero(); nc * h * w];
                for p in 0..nc {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[(p * h + y) * w + xx] = g[(p * ho + y / 2) * wo + xx / 2] * quarter;
                        }
                    }
                }
                grads_push(self, grads, x, dx);
            }
            &Op::Upsample2(x) => {
                let s = self.shape(x);
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let wo = 2 * w;
                let mut dx = vec![S::zero(); nc * h * w];
                for p in 0..nc {
                    for y in 0..h {
                        for xx in 0..w {
                            let base = (p * 2 * h + 2 * y) * wo + 2 * xx;
                            dx[(p * h + y) * w + xx] = g[base] + g[base + 1] + g[base + wo] + g[base + wo + 1];
                        }
                    }
                }
                grads_push(self, grads, x, dx);
            }
            &Op::Silu(x) => {
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let v = v.as_f64();
                        let s = kernels::sigmoid(v);
                        S::from_f64(gv.as_f64() * s * (1.0 + v * (1.0 - s)))
                    })
                    .collect();
                grads_push(self, grads, x, dx);
            }
            &Op::Relu(x) => {
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() })
                    .collect();
                grads_push(self, grads, x, dx);
            }
            Op::GroupNorm { x, gamma, beta, groups, means, rstds } => {
                let s = self.shape(*x);
                let spatial = s[2..].iter().product();
                let (dx, dg, db) = kernels::group_norm_backward(
                    self.value(*x).data(),
                    self.value(*gamma).data(),
                    g,
                    means,
                    rstds,
                    s[0],
                    s[1],
                    spatial,
                    *groups,
                );
                grads_push(self, grads, *x, dx);
                grads_push(self, grads, *gamma, dg);
                grads_push(self, grads, *beta, db);
            }
            &Op::Concat(a, b) => {
                let n = self.shape(a)[0];
                let (la, lb) = (self.value(a).numel() / n, self.value(b).numel() / n);
                let mut da = Vec::with_capacity(n * la);
                let mut db = Vec::with_capacity(n * lb);
                for j in 0..n {
                    let row = &g[j * (la + lb)..(j + 1) * (la + lb)];
                    da.extend_from_slice(&row[..la]);
                    db.extend_from_slice(&row[la..]);
                }
                grads_push(self, grads, a, da);
                grads_push(self, grads, b, db);
            }
            &Op::ChannelAdd(x, v) => {
                let spatial: usize = self.shape(x)[2..].iter().product();
                if self.tracked(v) {
                    let dv = g.chunks(spatial).map(|c| S::from_f64(super::scalar::sum_f64(c))).collect();
                    grads_push(self, grads, v, dv);
                }
                grads_push(self, grads, x, g.to_vec());
            }
            &Op::BiasAdd(x, b) => {
                let s = self.shape(x);
                let c = s[1];
                let spatial: usize = s[2..].iter().product();
                if self.tracked(b) {
                    let mut db = vec![0.0f64; c];
                    for (j, chunk) in g.chunks(spatial).enumerate() {
                        db[j % c] += super::scalar::sum_f64(chunk);
                    }
                    grads_push(self, grads, b, db.into_iter().map(S::from_f64).collect());
                }
                grads_push(self, grads, x, g.to_vec());
            }
            &Op::Mse(p, t) => {
                let (tp, tt) = (self.value(p), self.value(t));
                let scale = 2.0 * g[0].as_f64() / tp.numel() as f64;
                let diff: Vec<f64> = tp.data().iter().zip(tt.data()).map(|(a, b)| a.as_f64() - b.as_f64()).collect();
                if self.tracked(p) {
                    grads_push(self, grads, p, diff.iter().map(|d| S::from_f64(scale * d)).collect());
                }
                if self.tracked(t) {
                    grads_push(self, grads, t, diff.iter().map(|d| S::from_f64(-scale * d)).collect());
                }
            }
            &Op::Sum(x) => grads_push(self, grads, x, vec![g[0]; self.value(x).numel()]),
            &Op::Mean(x) => {
                let n = self.value(x).numel();
                grads_push(self, grads, x, vec![S::from_f64(g[0].as_f64() / n as f64); n]);
            }
        }
    }
}

#[inline]
fn grads_push<S: Scalar>(graph: &Graph<S>, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
    graph.accumulate(grads, v, contrib);
}
