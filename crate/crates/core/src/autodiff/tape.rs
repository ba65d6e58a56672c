//! Wengert-list reverse-mode differentiation.
//!
//! Ops are recorded eagerly while the forward pass runs; `backward` replays the
//! list from the root to the leaves. Only the op set the backbone and the
//! expert kinds need is supported. Gradients are accumulated in recording
//! order, so results are bit-reproducible.

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Prepend { prefix: Var, x: Var },
    MeanTokens(Var),
    Reshape(Var),
    Slice { src: Var, offset: usize },
    WeightedSum { weights: Var, items: Vec<Var> },
    Sum(Var),
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize>, coef: Vec<f64>, smoothing: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` if `v` does not require grad.
    /// Vars that require grad but are disconnected from the root get zeros.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let shape = &self.shapes[v.0];
        self.grads[v.0].as_ref().map(|g| Tensor::from_parts(shape.clone(), g.clone()))
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `a[..., k] @ b[k, n]`, leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape().len(), 2, "matmul rhs must be 2-D");
        let k = av.last_dim();
        assert_eq!(k, bv.shape()[0], "matmul inner dims");
        let n = bv.shape()[1];
        let m = av.len() / k;
        let mut out = vec![0.0; m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), rg)
    }

    /// Batched `a[B,m,k] @ b[B,k,n]`, or `a @ b^T` with `b[B,n,k]` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(bv.shape()[0], bs, "bmm batch");
        let n = if trans_b {
            assert_eq!(bv.shape()[2], k);
            bv.shape()[1]
        } else {
            assert_eq!(bv.shape()[1], k);
            bv.shape()[2]
        };
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            let ab = &av.data()[i * m * k..(i + 1) * m * k];
            let bb = &bv.data()[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ab, bb, ob, m, k, n);
            } else {
                gemm_nn(ab, bb, ob, m, k, n);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![bs, m, n], out), Op::BatchMatMul { a, b, trans_b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shapes");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), Op::Add(a, b), rg)
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s; `b` is tiled.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.shape().ends_with(bv.shape()), "broadcast suffix");
        let w = bv.len();
        let data = av.data().chunks(w).flat_map(|c| c.iter().zip(bv.data()).map(|(x, y)| x + y)).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), Op::AddBroadcast(a, b), rg)
    }

    /// `a * b` where `b`'s shape is a suffix of `a`'s; `b` is tiled.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.shape().ends_with(bv.shape()), "broadcast suffix");
        let w = bv.len();
        let data = av.data().chunks(w).flat_map(|c| c.iter().zip(bv.data()).map(|(x, y)| x * y)).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), Op::MulBroadcast(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shapes");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let t = Tensor::from_parts(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let t = Tensor::from_parts(av.shape().to_vec(), av.data().iter().map(|x| x.tanh()).collect());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let w = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(w) {
            softmax_in_place(row);
        }
        let shape = av.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), Op::Softmax(a), rg)
    }

    /// Affine-free layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let w = xv.last_dim();
        let mut data = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / w);
        for row in data.chunks_mut(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, data), Op::LayerNorm { x, inv_std }, rg)
    }

    /// Prepends `prefix[l,h]` to every sequence of `x[B,T,h]`, giving `[B,l+T,h]`.
    pub fn prepend(&mut self, prefix: Var, x: Var) -> Var {
        let (pv, xv) = (self.value(prefix), self.value(x));
        let (l, h) = (pv.shape()[0], pv.shape()[1]);
        let (bs, t) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(xv.shape()[2], h, "prepend width");
        let mut data = Vec::with_capacity(bs * (l + t) * h);
        for b in 0..bs {
            data.extend_from_slice(pv.data());
            data.extend_from_slice(&xv.data()[b * t * h..(b + 1) * t * h]);
        }
        let rg = self.rg(prefix) || self.rg(x);
        self.push(Tensor::from_parts(vec![bs, l + t, h], data), Op::Prepend { prefix, x }, rg)
    }

    /// Mean over the token axis: `[B,T,h] -> [B,h]`.
    pub fn mean_tokens(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (bs, t, h) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut data = vec![0.0; bs * h];
        for b in 0..bs {
            for tok in 0..t {
                let src = &xv.data()[(b * t + tok) * h..(b * t + tok + 1) * h];
                for (o, s) in data[b * h..(b + 1) * h].iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        let inv = 1.0 / t as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        self.push(Tensor::from_parts(vec![bs, h], data), Op::MeanTokens(x), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("reshape size");
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Contiguous window of a flat tensor, viewed with `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: Vec<usize>) -> Var {
        let n: usize = shape.iter().product();
        let data = self.value(src).data()[offset..offset + n].to_vec();
        let rg = self.rg(src);
        self.push(Tensor::from_parts(shape, data), Op::Slice { src, offset }, rg)
    }

    /// `sum_i weights[i] * items[i]`, summed in index order.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let wv = self.value(weights).data().to_vec();
        assert_eq!(wv.len(), items.len(), "one weight per item");
        let shape = self.value(items[0]).shape().to_vec();
        let mut out = vec![0.0; self.value(items[0]).len()];
        for (w, &it) in wv.iter().zip(items) {
            let iv = self.value(it);
            assert_eq!(iv.shape(), &shape[..], "weighted_sum shapes");
            for (o, x) in out.iter_mut().zip(iv.data()) {
                *o += w * x;
            }
        }
        let rg = self.rg(weights) || items.iter().any(|&v| self.rg(v));
        self.push(Tensor::from_parts(shape, out), Op::WeightedSum { weights, items: items.to_vec() }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Weighted mean cross-entropy of `logits[B,C]` against `targets`, with
    /// label smoothing. Samples with weight 0 are masked out; an all-masked
    /// batch yields a constant 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64], smoothing: f64) -> Var {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let bs = lv.len() / c;
        assert_eq!(targets.len(), bs, "one target per row");
        assert_eq!(weights.len(), bs, "one weight per row");
        let total: f64 = weights.iter().sum();
        let coef: Vec<f64> = if total > 0.0 { weights.iter().map(|w| w / total).collect() } else { vec![0.0; bs] };
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if coef[i] != 0.0 {
                let mut ce = 0.0;
                for (j, v) in row.iter().enumerate() {
                    let q = smoothed_target(j, targets[i], c, smoothing);
                    if q != 0.0 {
                        ce -= q * (v - lse);
                    }
                }
                loss += coef[i] * ce;
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, probs, targets: targets.to_vec(), coef, smoothing },
            rg,
        )
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(root) {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // trainable leaves disconnected from the root get zeros
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.last_dim();
                let n = bv.shape()[1];
                let m = av.len() / k;
                if self.rg(*a) {
                    let da = acc(grads, *a, av.len());
                    gemm_nt(g, bv.data(), da, m, n, k);
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, bv.len());
                    gemm_tn(av.data(), g, db, m, k, n);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                if self.rg(*a) {
                    let da = acc(grads, *a, av.len());
                    for t in 0..bs {
                        let gb = &g[t * m * n..(t + 1) * m * n];
                        let bb = &bv.data()[t * k * n..(t + 1) * k * n];
                        let out = &mut da[t * m * k..(t + 1) * m * k];
                        if *trans_b {
                            gemm_nn(gb, bb, out, m, n, k);
                        } else {
                            gemm_nt(gb, bb, out, m, n, k);
                        }
                    }
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, bv.len());
                    for t in 0..bs {
                        let gb = &g[t * m * n..(t + 1) * m * n];
                        let ab = &av.data()[t * m * k..(t + 1) * m * k];
                        let out = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gb, ab, out, m, n, k);
                        } else {
                            gemm_tn(ab, gb, out, m, k, n);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*b) {
                    let w = self.value(*b).len();
                    let db = acc(grads, *b, w);
                    for c in g.chunks(w) {
                        add_into(db, c);
                    }
                }
            }
            Op::MulBroadcast(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let w = bv.len();
                if self.rg(*a) {
                    let da = acc(grads, *a, g.len());
                    for (dc, gc) in da.chunks_mut(w).zip(g.chunks(w)) {
                        for ((d, gg), bb) in dc.iter_mut().zip(gc).zip(bv.data()) {
                            *d += gg * bb;
                        }
                    }
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, w);
                    for (gc, ac) in g.chunks(w).zip(av.data().chunks(w)) {
                        for ((d, gg), aa) in db.iter_mut().zip(gc).zip(ac) {
                            *d += gg * aa;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = acc(grads, *a, g.len());
                    for ((d, gg), bb) in da.iter_mut().zip(g).zip(bv.data()) {
                        *d += gg * bb;
                    }
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, g.len());
                    for ((d, gg), aa) in db.iter_mut().zip(g).zip(av.data()) {
                        *d += gg * aa;
                    }
                }
            }
            Op::Scale(a, s) => {
                let da = acc(grads, *a, g.len());
                for (d, gg) in da.iter_mut().zip(g) {
                    *d += gg * s;
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let da = acc(grads, *a, g.len());
                for ((d, gg), yy) in da.iter_mut().zip(g).zip(y) {
                    *d += gg * (1.0 - yy * yy);
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let w = node.value.last_dim();
                let da = acc(grads, *a, g.len());
                for ((dc, gc), yc) in da.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                    for ((d, gg), yy) in dc.iter_mut().zip(gc).zip(yc) {
                        *d += yy * (gg - dot);
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let w = node.value.last_dim();
                let nf = w as f64;
                let dx = acc(grads, *x, g.len());
                for (r, ((dc, gc), yc)) in dx.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)).enumerate() {
                    let sg: f64 = gc.iter().sum();
                    let sgy: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                    let inv = inv_std[r];
                    for ((d, gg), yy) in dc.iter_mut().zip(gc).zip(yc) {
                        *d += inv / nf * (nf * gg - sg - yy * sgy);
                    }
                }
            }
            Op::Prepend { prefix, x } => {
                let pv = self.value(*prefix);
                let (l, h) = (pv.shape()[0], pv.shape()[1]);
                let xs = self.value(*x).shape().to_vec();
                let (bs, t) = (xs[0], xs[1]);
                let stride = (l + t) * h;
                if self.rg(*prefix) {
                    let dp = acc(grads, *prefix, l * h);
                    for b in 0..bs {
                        add_into(dp, &g[b * stride..b * stride + l * h]);
                    }
                }
                if self.rg(*x) {
                    let dx = acc(grads, *x, bs * t * h);
                    for b in 0..bs {
                        add_into(&mut dx[b * t * h..(b + 1) * t * h], &g[b * stride + l * h..(b + 1) * stride]);
                    }
                }
            }
            Op::MeanTokens(x) => {
                let xs = self.value(*x).shape().to_vec();
                let (bs, t, h) = (xs[0], xs[1], xs[2]);
                let inv = 1.0 / t as f64;
                let dx = acc(grads, *x, bs * t * h);
                for b in 0..bs {
                    for tok in 0..t {
                        let dst = &mut dx[(b * t + tok) * h..(b * t + tok + 1) * h];
                        for (d, gg) in dst.iter_mut().zip(&g[b * h..(b + 1) * h]) {
                            *d += gg * inv;
                        }
                    }
                }
            }
            Op::Reshape(a) => add_into(acc(grads, *a, g.len()), g),
            Op::Slice { src, offset } => {
                let n = self.value(*src).len();
                let ds = acc(grads, *src, n);
                add_into(&mut ds[*offset..offset + g.len()], g);
            }
            Op::WeightedSum { weights, items } => {
                let wv = self.value(*weights).data();
                if self.rg(*weights) {
                    let dots: Vec<f64> =
                        items.iter().map(|&it| self.value(it).data().iter().zip(g).map(|(a, b)| a * b).sum()).collect();
                    let dw = acc(grads, *weights, wv.len());
                    add_into(dw, &dots);
                }
                for (w, &it) in wv.iter().zip(items) {
                    if self.rg(it) {
                        let di = acc(grads, it, g.len());
                        for (d, gg) in di.iter_mut().zip(g) {
                            *d += w * gg;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let da = acc(grads, *a, n);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::CrossEntropy { logits, probs, targets, coef, smoothing } => {
                let c = self.value(*logits).last_dim();
                let dl = acc(grads, *logits, probs.len());
                for (i, (dc, pc)) in dl.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                    if coef[i] == 0.0 {
                        continue;
                    }
                    for (j, (d, p)) in dc.iter_mut().zip(pc).enumerate() {
                        let q = smoothed_target(j, targets[i], c, *smoothing);
                        *d += g[0] * coef[i] * (p - q);
                    }
                }
            }
        }
    }
}

fn smoothed_target(j: usize, target: usize, classes: usize, smoothing: f64) -> f64 {
    let base = smoothing / classes as f64;
    if j == target {
        1.0 - smoothing + base
    } else {
        base
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_probe_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x);
        let y = tape.sum(sq);
        let g = tape.backward(y).get(x).unwrap();
        assert_eq!(g.data(), &[6.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_gradient() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        let loss = tape.cross_entropy(z, &[0], &[1.0], 0.0);
        assert!((tape.value(loss).data()[0] - 3f64.ln()).abs() < 1e-15);
        let g = tape.backward(loss).get(z).unwrap();
        let want = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_batch_is_constant() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap());
        let loss = tape.cross_entropy(z, &[0, 2], &[0.0, 0.0], 0.1);
        assert_eq!(tape.value(loss).data(), &[0.0]);
        let g = tape.backward(loss).get(z).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = tape.param(Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let y = tape.matmul(x, w);
        let s = tape.sum(y);
        let grads = tape.backward(s);
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn disconnected_param_gets_zeros() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.param(Tensor::vector(vec![5.0]));
        let s = tape.sum(a);
        let grads = tape.backward(s);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0]);
    }
}
