//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its output; [`Graph::backward`] walks the
//! tape in reverse. Single-threaded and allocation-order deterministic, so
//! identical inputs give bit-identical values and gradients.

use std::collections::BTreeMap;

use matrixmultiply::dgemm;
use panoqa_core::wavelet::{haar_forward, haar_inverse};

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const SIGMOID_LIMIT: f64 = 30.0;

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, k: usize, stride: usize, pad: usize },
    WeightedSum { a: Var, b: Var, wa: f64, wb: f64 },
    Relu(Var),
    Sigmoid(Var),
    MulBroadcast { x: Var, m: Var },
    ChannelMean(Var),
    ChannelMax { x: Var, idx: Vec<usize> },
    Concat(Vec<Var>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Dwt(Var),
    Iwt(Var),
    AvgPool { x: Var, k: usize },
    Upsample2(Var),
    GlobalMax { x: Var, idx: Vec<usize> },
    GlobalAvg(Var),
    Linear { x: Var, w: Var, b: Var },
    /// Scalar loss whose local gradient was computed in the forward pass.
    Loss { x: Var, dx: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnObservation {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    bn_observations: Vec<BnObservation>,
}

/// `c = a·b (+ beta·c)`, `a` logically `m×k`, `b` logically `k×n`, both
/// row-major unless flagged transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents checked above.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Iterates (column-row, output index, input index) triples that fall
    /// inside the input.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let ohw = self.oh * self.ow;
        for ci in 0..self.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base_in = (ci * self.h + iy as usize) * self.w;
                        let base_out = row * ohw + oy * self.ow;
                        for ox in 0..self.ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                f(base_out + ox, base_in + ix as usize, 0);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each(|o, i, _| cols[o] = x[i]);
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        self.for_each(|o, i, _| dx[i] += cols[o]);
    }
}

impl Graph {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training,
            bn_observations: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Trainable leaf tracked under `name`.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape
    }

    pub fn bn_observations(&self) -> &[BnObservation] {
        &self.bn_observations
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(ws.h, ws.w, "square kernels only");
        assert_eq!(ws.c, xs.c, "conv input channels {} != weight channels {}", xs.c, ws.c);
        let k = ws.h;
        let oh = (xs.h + 2 * pad - k) / stride + 1;
        let ow = (xs.w + 2 * pad - k) / stride + 1;
        let g = ConvGeom {
            c: xs.c,
            h: xs.h,
            w: xs.w,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let co = ws.n;
        let ohw = oh * ow;
        let out_shape = Shape::new(xs.n, co, oh, ow);
        let mut out = vec![0.0; out_shape.numel()];
        let mut cols = vec![0.0; g.rows() * ohw];
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value.data;
            for n in 0..xs.n {
                g.im2col(xv.sample(n), &mut cols);
                gemm(co, g.rows(), ohw, wv, false, &cols, false, &mut out[n * co * ohw..(n + 1) * co * ohw], 0.0);
            }
            if let Some(b) = b {
                let bv = &self.nodes[b.0].value.data;
                for n in 0..xs.n {
                    for (c, &bias) in bv.iter().enumerate() {
                        let o = &mut out[(n * co + c) * ohw..(n * co + c + 1) * ohw];
                        o.iter_mut().for_each(|v| *v += bias);
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(out_shape, out),
            Op::Conv {
                x,
                w,
                b,
                k,
                stride,
                pad,
            },
            &parents,
        )
    }

    pub fn weighted_sum(&mut self, a: Var, b: Var, wa: f64, wb: f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "elementwise shapes differ");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| wa * x + wb * y).collect();
        let shape = av.shape;
        self.push(Tensor::new(shape, data), Op::WeightedSum { a, b, wa, wb }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.weighted_sum(a, b, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.weighted_sum(a, b, 1.0, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| a.max(0.0)).collect();
        let shape = v.shape;
        self.push(Tensor::new(shape, data), Op::Relu(x), &[x])
    }

    /// Logistic sigmoid. Inputs are clamped to `±SIGMOID_LIMIT` so the output
    /// stays strictly inside (0, 1) in f64.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v
            .data
            .iter()
            .map(|&a| 1.0 / (1.0 + (-a.clamp(-SIGMOID_LIMIT, SIGMOID_LIMIT)).exp()))
            .collect();
        let shape = v.shape;
        self.push(Tensor::new(shape, data), Op::Sigmoid(x), &[x])
    }

    /// `x ⊙ m` with a single-channel `m` broadcast over channels.
    pub fn mul_broadcast(&mut self, x: Var, m: Var) -> Var {
        let (xv, mv) = (self.value(x), self.value(m));
        let s = xv.shape;
        assert_eq!(mv.shape, Shape::new(s.n, 1, s.h, s.w), "mask shape");
        let hw = s.plane();
        let mut out = vec![0.0; s.numel()];
        for n in 0..s.n {
            let mask = &mv.data[n * hw..(n + 1) * hw];
            for c in 0..s.c {
                let off = (n * s.c + c) * hw;
                for i in 0..hw {
                    out[off + i] = xv.data[off + i] * mask[i];
                }
            }
        }
        self.push(Tensor::new(s, out), Op::MulBroadcast { x, m }, &[x, m])
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let hw = s.plane();
        let mut out = vec![0.0; s.n * hw];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * hw;
                for i in 0..hw {
                    out[n * hw + i] += v.data[off + i] / s.c as f64;
                }
            }
        }
        self.push(Tensor::new(Shape::new(s.n, 1, s.h, s.w), out), Op::ChannelMean(x), &[x])
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let hw = s.plane();
        let mut out = vec![f64::NEG_INFINITY; s.n * hw];
        let mut idx = vec![0usize; s.n * hw];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * hw;
                for i in 0..hw {
                    if v.data[off + i] > out[n * hw + i] {
                        out[n * hw + i] = v.data[off + i];
                        idx[n * hw + i] = off + i;
                    }
                }
            }
        }
        self.push(Tensor::new(Shape::new(s.n, 1, s.h, s.w), out), Op::ChannelMax { x, idx }, &[x])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let s0 = self.shape(xs[0]);
        let total: usize = xs.iter().map(|&v| self.shape(v).c).sum();
        let shape = Shape::new(s0.n, total, s0.h, s0.w);
        let hw = s0.plane();
        let mut out = Vec::with_capacity(shape.numel());
        for n in 0..s0.n {
            for &v in xs {
                let t = self.value(v);
                assert!(t.shape.n == s0.n && t.shape.h == s0.h && t.shape.w == s0.w, "concat shape mismatch");
                out.extend_from_slice(&t.data[n * t.shape.c * hw..(n + 1) * t.shape.c * hw]);
            }
        }
        self.push(Tensor::new(shape, out), Op::Concat(xs.to_vec()), xs)
    }

    /// Batch normalisation over `(N, H, W)` per channel. Training mode uses
    /// batch statistics and records them under `name`; evaluation mode uses
    /// the supplied running statistics.
    pub fn batch_norm(&mut self, name: &str, x: Var, gamma: Var, beta: Var, running: (&[f64], &[f64]), eps: f64) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let hw = s.plane();
        let m = (s.n * hw) as f64;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0; s.c];
            let mut var = vec![0.0; s.c];
            for c in 0..s.c {
                let mut acc = 0.0;
                for n in 0..s.n {
                    acc += v.data[(n * s.c + c) * hw..(n * s.c + c + 1) * hw].iter().sum::<f64>();
                }
                mean[c] = acc / m;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += v.data[(n * s.c + c) * hw..(n * s.c + c + 1) * hw]
                        .iter()
                        .map(|a| (a - mean[c]).powi(2))
                        .sum::<f64>();
                }
                var[c] = sq / m;
            }
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; s.numel()];
        let mut out = vec![0.0; s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * hw;
                for i in off..off + hw {
                    xhat[i] = (v.data[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let train = self.training;
        if train {
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            self.bn_observations.push(BnObservation {
                name: name.to_string(),
                mean,
                var: var.iter().map(|v| v * unbiased).collect(),
            });
        }
        self.push(
            Tensor::new(s, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )
    }

    /// One-level orthonormal Haar analysis per channel. Output channels are
    /// band-major: `[LL(c) | LH(c) | HL(c) | HH(c)]`.
    pub fn dwt(&mut self, x: Var) -> Var {
        let t = dwt_tensor(self.value(x));
        self.push(t, Op::Dwt(x), &[x])
    }

    /// Inverse of [`Graph::dwt`].
    pub fn iwt(&mut self, x: Var) -> Var {
        let t = iwt_tensor(self.value(x));
        self.push(t, Op::Iwt(x), &[x])
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        let v = self.value(x);
        let s = v.shape;
        assert!(s.h % k == 0 && s.w % k == 0, "avg_pool needs divisible dims");
        let (oh, ow) = (s.h / k, s.w / k);
        let mut out = vec![0.0; s.n * s.c * oh * ow];
        let norm = 1.0 / (k * k) as f64;
        for nc in 0..s.n * s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    out[(nc * oh + y / k) * ow + xx / k] += norm * v.data[(nc * s.h + y) * s.w + xx];
                }
            }
        }
        self.push(Tensor::new(Shape::new(s.n, s.c, oh, ow), out), Op::AvgPool { x, k }, &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let (oh, ow) = (2 * s.h, 2 * s.w);
        let mut out = vec![0.0; s.n * s.c * oh * ow];
        for nc in 0..s.n * s.c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(nc * oh + y) * ow + xx] = v.data[(nc * s.h + y / 2) * s.w + xx / 2];
                }
            }
        }
        self.push(Tensor::new(Shape::new(s.n, s.c, oh, ow), out), Op::Upsample2(x), &[x])
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let hw = s.plane();
        let mut out = vec![0.0; s.n * s.c];
        let mut idx = vec![0; s.n * s.c];
        for nc in 0..s.n * s.c {
            let sl = &v.data[nc * hw..(nc + 1) * hw];
            let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
            for (i, &a) in sl.iter().enumerate() {
                if a > best {
                    best = a;
                    bi = i;
                }
            }
            out[nc] = best;
            idx[nc] = nc * hw + bi;
        }
        self.push(Tensor::new(Shape::new(s.n, s.c, 1, 1), out), Op::GlobalMax { x, idx }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.shape;
        let hw = s.plane();
        let out = (0..s.n * s.c)
            .map(|nc| v.data[nc * hw..(nc + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::new(Shape::new(s.n, s.c, 1, 1), out), Op::GlobalAvg(x), &[x])
    }

    /// `x` is `(n, f, 1, 1)`, `w` is `(out, f, 1, 1)`, `b` is `(1, out, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let f = xs.sample();
        assert_eq!(ws.c, f, "linear input features");
        let o = ws.n;
        let mut out = vec![0.0; xs.n * o];
        gemm(xs.n, f, o, &self.value(x).data, false, &self.value(w).data, true, &mut out, 0.0);
        let bv = &self.value(b).data;
        for n in 0..xs.n {
            for j in 0..o {
                out[n * o + j] += bv[j];
            }
        }
        self.push(Tensor::new(Shape::new(xs.n, o, 1, 1), out), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Weighted Charbonnier penalty on sub-band tensors laid out as by
    /// [`Graph::dwt`]: mean over elements of `sqrt(√β_b·(x−t)² + eps)`.
    pub fn charbonnier(&mut self, x: Var, target: &Tensor, beta: [f64; 4], eps: f64) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape, target.shape, "charbonnier shapes differ");
        let s = v.shape;
        assert_eq!(s.c % 4, 0, "sub-band tensors have 4·c channels");
        let per_band = s.c / 4;
        let hw = s.plane();
        let count = s.numel() as f64;
        let mut total = 0.0;
        let mut dx = vec![0.0; s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let wb = beta[c / per_band].sqrt();
                let off = (n * s.c + c) * hw;
                for i in off..off + hw {
                    let d = v.data[i] - target.data[i];
                    let l = (wb * d * d + eps).sqrt();
                    total += l;
                    dx[i] = wb * d / l / count;
                }
            }
        }
        self.push(Tensor::scalar(total / count), Op::Loss { x, dx }, &[x])
    }

    /// Mean squared error of per-sample scalars against `targets`.
    pub fn mse_scores(&mut self, x: Var, targets: &[f64]) -> Var {
        let v = self.value(x);
        assert_eq!(v.numel(), targets.len(), "one target per sample");
        let n = targets.len() as f64;
        let mut total = 0.0;
        let dx = v
            .data
            .iter()
            .zip(targets)
            .map(|(p, t)| {
                total += (p - t) * (p - t);
                2.0 * (p - t) / n
            })
            .collect();
        self.push(Tensor::scalar(total / n), Op::Loss { x, dx }, &[x])
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter leaf reached by the last backward pass.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, self.grads.get(i).and_then(|g| g.as_ref())) {
                match out.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.shape.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Ops are moved out temporarily so parents' buffers can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                k,
                stride,
                pad,
            } => self.conv_backward(i, g, *x, *w, *b, *k, *stride, *pad),
            Op::WeightedSum { a, b, wa, wb } => {
                if let Some(da) = self.acc(*a) {
                    da.iter_mut().zip(g).for_each(|(d, g)| *d += wa * g);
                }
                if let Some(db) = self.acc(*b) {
                    db.iter_mut().zip(g).for_each(|(d, g)| *d += wb * g);
                }
            }
            Op::Relu(x) => {
                let out = std::mem::take(&mut self.nodes[i].value.data);
                if let Some(dx) = self.acc(*x) {
                    for j in 0..g.len() {
                        if out[j] > 0.0 {
                            dx[j] += g[j];
                        }
                    }
                }
                self.nodes[i].value.data = out;
            }
            Op::Sigmoid(x) => {
                let out = std::mem::take(&mut self.nodes[i].value.data);
                if let Some(dx) = self.acc(*x) {
                    for j in 0..g.len() {
                        dx[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
                self.nodes[i].value.data = out;
            }
            Op::MulBroadcast { x, m } => {
                let s = self.shape(*x);
                let hw = s.plane();
                let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                let mv = std::mem::take(&mut self.nodes[m.0].value.data);
                if let Some(dx) = self.acc(*x) {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * hw;
                            for j in 0..hw {
                                dx[off + j] += g[off + j] * mv[n * hw + j];
                            }
                        }
                    }
                }
                if let Some(dm) = self.acc(*m) {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * hw;
                            for j in 0..hw {
                                dm[n * hw + j] += g[off + j] * xv[off + j];
                            }
                        }
                    }
                }
                self.nodes[x.0].value.data = xv;
                self.nodes[m.0].value.data = mv;
            }
            Op::ChannelMean(x) => {
                let s = self.shape(*x);
                let hw = s.plane();
                if let Some(dx) = self.acc(*x) {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * hw;
                            for j in 0..hw {
                                dx[off + j] += g[n * hw + j] / s.c as f64;
                            }
                        }
                    }
                }
            }
            Op::ChannelMax { x, idx } | Op::GlobalMax { x, idx } => {
                if let Some(dx) = self.acc(*x) {
                    for (j, &src) in idx.iter().enumerate() {
                        dx[src] += g[j];
                    }
                }
            }
            Op::Concat(xs) => {
                let s = self.shape(i_var(i));
                let hw = s.plane();
                let mut c0 = 0;
                for &v in xs {
                    let c = self.shape(v).c;
                    if let Some(dv) = self.acc(v) {
                        for n in 0..s.n {
                            let src = &g[(n * s.c + c0) * hw..(n * s.c + c0 + c) * hw];
                            dv[n * c * hw..(n + 1) * c * hw]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                    c0 += c;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.shape(*x);
                let hw = s.plane();
                let m = (s.n * hw) as f64;
                let mut sum_g = vec![0.0; s.c];
                let mut sum_gx = vec![0.0; s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let off = (n * s.c + c) * hw;
                        for j in off..off + hw {
                            sum_g[c] += g[j];
                            sum_gx[c] += g[j] * xhat[j];
                        }
                    }
                }
                let gam = self.value(*gamma).data.clone();
                if let Some(dg) = self.acc(*gamma) {
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = self.acc(*beta) {
                    db.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v);
                }
                let train = *train;
                if let Some(dx) = self.acc(*x) {
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * hw;
                            let k = gam[c] * inv_std[c];
                            for j in off..off + hw {
                                dx[j] += if train {
                                    k * (g[j] - sum_g[c] / m - xhat[j] * sum_gx[c] / m)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                }
            }
            Op::Dwt(x) => {
                let s = self.shape(i_var(i));
                let back = iwt_tensor(&Tensor::new(s, g.to_vec()));
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().zip(&back.data).for_each(|(d, v)| *d += v);
                }
            }
            Op::Iwt(x) => {
                let s = self.shape(i_var(i));
                let back = dwt_tensor(&Tensor::new(s, g.to_vec()));
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().zip(&back.data).for_each(|(d, v)| *d += v);
                }
            }
            Op::AvgPool { x, k } => {
                let s = self.shape(*x);
                let (oh, ow) = (s.h / k, s.w / k);
                let norm = 1.0 / (k * k) as f64;
                if let Some(dx) = self.acc(*x) {
                    for nc in 0..s.n * s.c {
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                dx[(nc * s.h + y) * s.w + xx] += norm * g[(nc * oh + y / k) * ow + xx / k];
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let (oh, ow) = (2 * s.h, 2 * s.w);
                if let Some(dx) = self.acc(*x) {
                    for nc in 0..s.n * s.c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[(nc * s.h + y / 2) * s.w + xx / 2] += g[(nc * oh + y) * ow + xx];
                            }
                        }
                    }
                }
            }
            Op::GlobalAvg(x) => {
                let s = self.shape(*x);
                let hw = s.plane();
                if let Some(dx) = self.acc(*x) {
                    for nc in 0..s.n * s.c {
                        for j in 0..hw {
                            dx[nc * hw + j] += g[nc] / hw as f64;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, f, o) = (xs.n, xs.sample(), ws.n);
                let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                let wv = std::mem::take(&mut self.nodes[w.0].value.data);
                if let Some(dx) = self.acc(*x) {
                    gemm(n, o, f, g, false, &wv, false, dx, 1.0);
                }
                if let Some(dw) = self.acc(*w) {
                    gemm(o, n, f, g, true, &xv, false, dw, 1.0);
                }
                if let Some(db) = self.acc(*b) {
                    for r in 0..n {
                        for j in 0..o {
                            db[j] += g[r * o + j];
                        }
                    }
                }
                self.nodes[x.0].value.data = xv;
                self.nodes[w.0].value.data = wv;
            }
            Op::Loss { x, dx: local } => {
                let up = g[0];
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().zip(local).for_each(|(d, l)| *d += up * l);
                }
            }
        }
        self.nodes[i].op = op;
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(&mut self, i: usize, g: &[f64], x: Var, w: Var, b: Option<Var>, k: usize, stride: usize, pad: usize) {
        let xs = self.shape(x);
        let os = self.shape(i_var(i));
        let geom = ConvGeom {
            c: xs.c,
            h: xs.h,
            w: xs.w,
            k,
            stride,
            pad,
            oh: os.h,
            ow: os.w,
        };
        let (co, ohw, rows) = (os.c, os.plane(), geom.rows());
        let xv = std::mem::take(&mut self.nodes[x.0].value.data);
        let wv = std::mem::take(&mut self.nodes[w.0].value.data);
        let need_w = self.nodes[w.0].requires_grad;
        let need_x = self.nodes[x.0].requires_grad;
        let mut cols = vec![0.0; rows * ohw];
        if need_w {
            let mut dw = self.grads[w.0].take().unwrap_or_else(|| vec![0.0; wv.len()]);
            for n in 0..xs.n {
                geom.im2col(&xv[n * xs.sample()..(n + 1) * xs.sample()], &mut cols);
                gemm(co, ohw, rows, &g[n * co * ohw..(n + 1) * co * ohw], false, &cols, true, &mut dw, 1.0);
            }
            self.grads[w.0] = Some(dw);
        }
        if need_x {
            let mut dx = self.grads[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]);
            for n in 0..xs.n {
                gemm(rows, co, ohw, &wv, true, &g[n * co * ohw..(n + 1) * co * ohw], false, &mut cols, 0.0);
                geom.col2im(&cols, &mut dx[n * xs.sample()..(n + 1) * xs.sample()]);
            }
            self.grads[x.0] = Some(dx);
        }
        self.nodes[x.0].value.data = xv;
        self.nodes[w.0].value.data = wv;
        if let Some(b) = b {
            if let Some(db) = self.acc(b) {
                for n in 0..os.n {
                    for c in 0..co {
                        db[c] += g[(n * co + c) * ohw..(n * co + c + 1) * ohw].iter().sum::<f64>();
                    }
                }
            }
        }
    }
}

fn i_var(i: usize) -> Var {
    Var(i)
}

/// Channelwise one-level Haar analysis of a tensor, band-major channels.
pub fn dwt_tensor(t: &Tensor) -> Tensor {
    let s = t.shape;
    assert!(s.h % 2 == 0 && s.w % 2 == 0, "DWT needs even spatial dims, got {s:?}");
    let (hh, hw) = (s.h / 2, s.w / 2);
    let q = hh * hw;
    let out_s = Shape::new(s.n, 4 * s.c, hh, hw);
    let mut out = vec![0.0; out_s.numel()];
    let mut bufs = [vec![0.0; q], vec![0.0; q], vec![0.0; q], vec![0.0; q]];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &t.data[(n * s.c + c) * s.plane()..(n * s.c + c + 1) * s.plane()];
            let [b0, b1, b2, b3] = &mut bufs;
            haar_forward(src, s.w, s.h, [b0, b1, b2, b3]);
            for (band, buf) in bufs.iter().enumerate() {
                let oc = band * s.c + c;
                out[(n * out_s.c + oc) * q..(n * out_s.c + oc + 1) * q].copy_from_slice(buf);
            }
        }
    }
    Tensor::new(out_s, out)
}

/// Inverse of [`dwt_tensor`].
pub fn iwt_tensor(t: &Tensor) -> Tensor {
    let s = t.shape;
    assert_eq!(s.c % 4, 0, "IWT needs 4·c channels, got {s:?}");
    let c_out = s.c / 4;
    let q = s.plane();
    let out_s = Shape::new(s.n, c_out, 2 * s.h, 2 * s.w);
    let mut out = vec![0.0; out_s.numel()];
    for n in 0..s.n {
        for c in 0..c_out {
            let band = |b: usize| {
                let ic = b * c_out + c;
                &t.data[(n * s.c + ic) * q..(n * s.c + ic + 1) * q]
            };
            let dst = &mut out[(n * c_out + c) * out_s.plane()..(n * c_out + c + 1) * out_s.plane()];
            haar_inverse([band(0), band(1), band(2), band(3)], s.w, s.h, dst);
        }
    }
    Tensor::new(out_s, out)
}
