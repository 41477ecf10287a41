//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamSet`] rather than copied; [`Graph::backward`]
//! returns gradients for each parameter that took part in the pass.

use rand::Rng;

use super::tensor::{ParamId, ParamSet, Scalar, Tensor};
use super::NeuralError;

/// Lower clamp applied to probabilities inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Dropout(Var, Vec<T>),
    Conv2d(Var, Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Softmax(Var),
    Bce { pred: Var, target: Vec<T> },
    SoftmaxCe { logits: Var, target: usize },
    Dot { x: Var, weights: Vec<T> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    /// Whether any parameter lies upstream.
    needs_grad: bool,
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::Conv2d(a, b) => {
                vec![*a, *b]
            }
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::LeakyRelu(x, _)
            | Op::Dropout(x, _)
            | Op::Reshape(x)
            | Op::Softmax(x)
            | Op::MaxPool { x, .. }
            | Op::Narrow { x, .. }
            | Op::Dot { x, .. } => vec![*x],
            Op::Bce { pred, .. } => vec![*pred],
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

/// Per-parameter gradients; `None` for parameters the pass never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Gradients {
            params: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.params[id.0].as_deref()
    }

    /// Adds `scale * other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients<T>, scale: T) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if let Some(src) = src {
                let dst = dst.get_or_insert_with(|| vec![T::zero(); src.len()]);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += scale * s;
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        let needs_grad =
            matches!(op, Op::Param(_)) || op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t.shape, t.data, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.input(Tensor::zeros(shape))
    }

    /// Leaf for a parameter; repeated calls return the same node so that
    /// gradients from every use accumulate.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape.clone();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NeuralError> {
        if self.shape(a) != self.shape(b) {
            return Err(NeuralError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NeuralError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                for (o, &w) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * w;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NeuralError> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(NeuralError::Shape(format!(
                "bias {:?} for input {:?}",
                self.shape(b),
                self.shape(x)
            )));
        }
        let bv = self.value(b);
        let out: Vec<T> = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &c)| a + c))
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, b)))
    }

    /// `x W + b` for `x: [m, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NeuralError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.shape(x).to_vec(), out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(
            x,
            |v| if v >= T::zero() { v } else { v * s },
            Op::LeakyRelu(x, s),
        )
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`. Without an
    /// rng (inference) or at rate 0 this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Dropout(x, mask))
    }

    /// Same-padded 2D convolution: `x: [H, W, Cin]`, `k: [KH, KW, Cin, Cout]`
    /// with odd kernel sides, giving `[H, W, Cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var, NeuralError> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[2] != sx[2] || sk[0] % 2 == 0 || sk[1] % 2 == 0 {
            return Err(NeuralError::Shape(format!(
                "conv2d {sx:?} with kernel {sk:?}"
            )));
        }
        let (h, w, ci) = (sx[0], sx[1], sx[2]);
        let (kh, kw, co) = (sk[0], sk[1], sk[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (xv, kv) = (self.value(x), self.value(k));
        let mut out = vec![T::zero(); h * w * co];
        for r in 0..h {
            for c in 0..w {
                let o = &mut out[(r * w + c) * co..(r * w + c + 1) * co];
                for dr in 0..kh {
                    let rr = r + dr;
                    if rr < ph || rr - ph >= h {
                        continue;
                    }
                    let rr = rr - ph;
                    for dc in 0..kw {
                        let cc = c + dc;
                        if cc < pw || cc - pw >= w {
                            continue;
                        }
                        let cc = cc - pw;
                        let xin = &xv[(rr * w + cc) * ci..(rr * w + cc + 1) * ci];
                        let kbase = (dr * kw + dc) * ci;
                        for (i, &xval) in xin.iter().enumerate() {
                            if xval == T::zero() {
                                continue;
                            }
                            let krow = &kv[(kbase + i) * co..(kbase + i + 1) * co];
                            for (ov, &kval) in o.iter_mut().zip(krow) {
                                *ov += xval * kval;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![h, w, co], out, Op::Conv2d(x, k)))
    }

    /// Max pooling along axis 1 of `[H, W, C]` with width = stride; the
    /// output has `floor(W / width)` columns.
    pub fn maxpool_freq(&mut self, x: Var, width: usize) -> Result<Var, NeuralError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || width == 0 {
            return Err(NeuralError::Shape(format!(
                "maxpool over {s:?} width {width}"
            )));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let wo = w / width;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(h * wo * c);
        let mut argmax = Vec::with_capacity(h * wo * c);
        for r in 0..h {
            for j in 0..wo {
                for ch in 0..c {
                    let mut best = (r * w + j * width) * c + ch;
                    for t in 1..width {
                        let idx = (r * w + j * width + t) * c + ch;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(vec![h, wo, c], out, Op::MaxPool { x, argmax }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, NeuralError> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| NeuralError::Shape("concat of nothing".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(NeuralError::Shape(format!(
                "concat axis {axis} for {first:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NeuralError::Shape(format!("concat {s:?} with {first:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    pub fn narrow(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, NeuralError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(NeuralError::Shape(format!(
                "narrow {s:?} axis {axis} [{start}, +{len})"
            )));
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(shape, out, Op::Narrow { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NeuralError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(NeuralError::Shape(format!(
                "reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().unwrap_or(&1);
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(softmax_row)
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, pred: Var, target: &[T]) -> Result<Var, NeuralError> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(NeuralError::Shape(format!(
                "bce over {} predictions and {} targets",
                p.len(),
                target.len()
            )));
        }
        if let Some(t) = target.iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(NeuralError::InvalidTarget(format!(
                "non-binary target {t:?}"
            )));
        }
        let (lo, hi) = (T::of(BCE_EPS), T::one() - T::of(BCE_EPS));
        let total: T = p
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.max(lo).min(hi);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        let loss = total / T::of(p.len() as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Cross-entropy of softmax(logits) against a class index.
    pub fn softmax_ce(&mut self, logits: Var, target: usize) -> Result<Var, NeuralError> {
        let z = self.value(logits);
        if target >= z.len() {
            return Err(NeuralError::InvalidTarget(format!(
                "class {target} of {}",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - z[target];
        Ok(self.push(vec![1], vec![loss], Op::SoftmaxCe { logits, target }))
    }

    /// Scalar `sum(x * weights)`; handy as a probe loss.
    pub fn dot(&mut self, x: Var, weights: &[T]) -> Result<Var, NeuralError> {
        if self.value(x).len() != weights.len() {
            return Err(NeuralError::Shape("dot length mismatch".into()));
        }
        let s = self
            .value(x)
            .iter()
            .zip(weights)
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(
            vec![1],
            vec![s],
            Op::Dot {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn backward(&self, loss: Var) -> Gradients<T> {
        self.backward_scaled(loss, T::one())
    }

    /// Backpropagates `seed * d(loss)`.
    pub fn backward_scaled(&self, loss: Var, seed: T) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed; self.value(loss).len()]);
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.params[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let ga = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            }
                        }
                    }
                    if !self.nodes[b.0].needs_grad {
                        continue;
                    }
                    let gb = slot(&mut grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            for (gv, &gg) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *gv += x * gg;
                            }
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    let n = self.shape(*b)[0];
                    add_into(slot(&mut grads, *x, g.len()), &g);
                    let gb = slot(&mut grads, *b, n);
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, g.len());
                    for ((d, &gg), &y) in ga.iter_mut().zip(&g).zip(bv) {
                        *d += gg * y;
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for ((d, &gg), &x) in gb.iter_mut().zip(&g).zip(av) {
                        *d += gg * x;
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = slot(&mut grads, *x, g.len());
                    for ((d, &gg), &y) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *d += gg * y * (T::one() - y);
                    }
                }
                Op::Tanh(x) => {
                    let gx = slot(&mut grads, *x, g.len());
                    for ((d, &gg), &y) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *d += gg * (T::one() - y * y);
                    }
                }
                Op::LeakyRelu(x, s) => {
                    let xv = self.value(*x);
                    let gx = slot(&mut grads, *x, g.len());
                    for ((d, &gg), &v) in gx.iter_mut().zip(&g).zip(xv) {
                        *d += if v >= T::zero() { gg } else { gg * *s };
                    }
                }
                Op::Dropout(x, mask) => {
                    let gx = slot(&mut grads, *x, g.len());
                    for ((d, &gg), &m) in gx.iter_mut().zip(&g).zip(mask) {
                        *d += gg * m;
                    }
                }
                Op::Conv2d(x, k) => self.conv2d_backward(&mut grads, *x, *k, &g),
                Op::MaxPool { x, argmax } => {
                    let n = self.value(*x).len();
                    let gx = slot(&mut grads, *x, n);
                    for (&src, &gg) in argmax.iter().zip(&g) {
                        gx[src] += gg;
                    }
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = split_at_axis(&node.shape, *axis);
                    let mut offset = 0;
                    for &v in xs {
                        let len = self.shape(v)[*axis] * inner;
                        let gv = slot(&mut grads, v, outer * len);
                        for o in 0..outer {
                            let src =
                                &g[o * total * inner + offset..o * total * inner + offset + len];
                            add_into(&mut gv[o * len..(o + 1) * len], src);
                        }
                        offset += len;
                    }
                }
                Op::Narrow { x, axis, start } => {
                    let sx = self.shape(*x).to_vec();
                    let (outer, n, inner) = split_at_axis(&sx, *axis);
                    let len = node.shape[*axis];
                    let gx = slot(&mut grads, *x, outer * n * inner);
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        add_into(
                            &mut gx[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
                Op::Reshape(x) => add_into(slot(&mut grads, *x, g.len()), &g),
                Op::Softmax(x) => {
                    let n = *node.shape.last().unwrap_or(&1);
                    let gx = slot(&mut grads, *x, g.len());
                    for ((dx, gy), y) in gx
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(node.value.chunks_exact(n))
                    {
                        let dot: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((d, &gg), &yy) in dx.iter_mut().zip(gy).zip(y) {
                            *d += yy * (gg - dot);
                        }
                    }
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred);
                    let n = T::of(p.len() as f64);
                    let (lo, hi) = (T::of(BCE_EPS), T::one() - T::of(BCE_EPS));
                    let gp = slot(&mut grads, *pred, p.len());
                    for ((d, &pv), &t) in gp.iter_mut().zip(p).zip(target) {
                        if pv < lo || pv > hi {
                            continue;
                        }
                        *d += g[0] * (-(t / pv) + (T::one() - t) / (T::one() - pv)) / n;
                    }
                }
                Op::SoftmaxCe { logits, target } => {
                    let probs = softmax_row(self.value(*logits));
                    let gz = slot(&mut grads, *logits, probs.len());
                    for (i, (d, p)) in gz.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *d += g[0] * (p - onehot);
                    }
                }
                Op::Dot { x, weights } => {
                    let gx = slot(&mut grads, *x, weights.len());
                    for (d, &w) in gx.iter_mut().zip(weights) {
                        *d += g[0] * w;
                    }
                }
            }
        }
        out
    }

    fn conv2d_backward(&self, grads: &mut [Option<Vec<T>>], x: Var, k: Var, g: &[T]) {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let (h, w, ci) = (sx[0], sx[1], sx[2]);
        let (kh, kw, co) = (sk[0], sk[1], sk[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let (xv, kv) = (self.value(x), self.value(k));
        let want_x = self.nodes[x.0].needs_grad;
        let mut gx = vec![T::zero(); xv.len()];
        let mut gk = vec![T::zero(); kv.len()];
        for r in 0..h {
            for c in 0..w {
                let go = &g[(r * w + c) * co..(r * w + c + 1) * co];
                for dr in 0..kh {
                    let rr = r + dr;
                    if rr < ph || rr - ph >= h {
                        continue;
                    }
                    let rr = rr - ph;
                    for dc in 0..kw {
                        let cc = c + dc;
                        if cc < pw || cc - pw >= w {
                            continue;
                        }
                        let cc = cc - pw;
                        let xbase = (rr * w + cc) * ci;
                        let kbase = (dr * kw + dc) * ci;
                        for i in 0..ci {
                            let krow = &kv[(kbase + i) * co..(kbase + i + 1) * co];
                            if want_x {
                                gx[xbase + i] += go.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                            }
                            let xval = xv[xbase + i];
                            if xval != T::zero() {
                                for (gkv, &gg) in gk[(kbase + i) * co..(kbase + i + 1) * co]
                                    .iter_mut()
                                    .zip(go)
                                {
                                    *gkv += xval * gg;
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_x {
            add_into(slot(grads, x, gx.len()), &gx);
        }
        add_into(slot(grads, k, gk.len()), &gk);
    }
}

fn softmax_row<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        for (name, shape, data) in values {
            p.add(name, Tensor::new(shape.clone(), data.clone()).unwrap())
                .unwrap();
        }
        p
    }

    #[test]
    fn leaky_relu_slope() {
        let p = ParamSet::<f32>::new();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.leaky_relu(x, 0.3);
        assert_eq!(g.value(y), &[-0.3, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_band_counts() {
        let p = ParamSet::<f32>::new();
        let mut g = Graph::new(&p);
        let x = g.zeros(&[2, 80, 3]);
        let y = g.maxpool_freq(x, 3).unwrap();
        assert_eq!(g.shape(y), &[2, 26, 3]);
        let z = g.maxpool_freq(y, 3).unwrap();
        assert_eq!(g.shape(z), &[2, 8, 3]);
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let p = ParamSet::<f64>::new();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::filled(&[256], 0.7));
        let y = g.softmax(x);
        assert!(g.value(y).iter().all(|&v| (v - 1.0 / 256.0).abs() < 1e-15));
        let ce = g.softmax_ce(x, 17).unwrap();
        assert!((g.scalar(ce) - 256f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_reference_values() {
        let p = ParamSet::<f32>::new();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0]).unwrap());
        let l = g.bce(x, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(g.scalar(l) <= 1.2e-7, "{}", g.scalar(l));
        let h = g.input(Tensor::filled(&[4], 0.5));
        let l = g.bce(h, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((g.scalar(l) - std::f32::consts::LN_2).abs() < 1e-7);
        assert!(matches!(
            g.bce(h, &[0.5, 0.0, 0.0, 1.0]),
            Err(NeuralError::InvalidTarget(_))
        ));
        assert!(matches!(
            g.softmax_ce(h, 4),
            Err(NeuralError::InvalidTarget(_))
        ));
    }

    #[test]
    fn dropout_identity_and_expectation() {
        let p = ParamSet::<f64>::new();
        let mut g = Graph::new(&p);
        let x = g.input(Tensor::filled(&[20_000], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(g.dropout(x, 0.0, Some(&mut rng)), x);
        assert_eq!(g.dropout::<ChaCha8Rng>(x, 0.5, None), x);
        let y = g.dropout(x, 0.5, Some(&mut rng));
        let mean = g.value(y).iter().sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(g.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn shape_errors() {
        let p = ParamSet::<f32>::new();
        let mut g = Graph::new(&p);
        let a = g.zeros(&[2, 3]);
        let b = g.zeros(&[2, 3]);
        assert!(matches!(g.matmul(a, b), Err(NeuralError::Shape(_))));
        let c = g.zeros(&[3, 3]);
        assert!(matches!(g.add(a, c), Err(NeuralError::Shape(_))));
        assert!(matches!(g.concat(&[a, c], 1), Err(NeuralError::Shape(_))));
        assert!(g.concat(&[a, c], 0).is_ok());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let p = graph_with(&[
            ("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
            ("b", vec![2, 1], vec![5.0, 6.0]),
        ]);
        let mut g = Graph::new(&p);
        let a = g.param(ParamId(0));
        let b = g.param(ParamId(1));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = g.narrow(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(back), &[5.0, 6.0]);
        let l = g.dot(back, &[1.0, 10.0]).unwrap();
        let grads = g.backward(l);
        assert_eq!(grads.params[1].as_deref(), Some(&[1.0, 10.0][..]));
        assert_eq!(grads.params[0].as_deref(), Some(&[0.0; 4][..]));
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut k = vec![0.0; 3 * 3 * 2 * 2];
        // center tap, channel i -> channel i
        let center = (3 + 1) * 2;
        k[center * 2] = 1.0;
        k[(center + 1) * 2 + 1] = 1.0;
        let xs: Vec<f64> = (0..4 * 5 * 2).map(|i| i as f64).collect();
        let p = graph_with(&[("x", vec![4, 5, 2], xs.clone()), ("k", vec![3, 3, 2, 2], k)]);
        let mut g = Graph::new(&p);
        let x = g.param(ParamId(0));
        let k = g.param(ParamId(1));
        let y = g.conv2d(x, k).unwrap();
        assert_eq!(g.value(y), &xs[..]);
    }
}
