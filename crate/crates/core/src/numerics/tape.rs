//! Reverse-mode differentiation over a linear tape.
//!
//! Every op records its inputs and whatever it needs from the forward pass;
//! [`Tape::backward`] walks the tape in reverse and accumulates exact
//! analytic gradients into a dense [`Gradients`] for the parameter store.

use crate::numerics::{Gradients, NumericsError, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Node handle on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Lookup { table: ParamId, rows: Vec<Option<usize>> },
    Linear { x: Var, w: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    MeanRows(Var),
    Relu(Var),
    UnitNormalize { x: Var, norm: T },
    Reshape(Var),
    Conv2d { x: Var, kernel: Var, bias: Var },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    Nll { logits: Var, target: usize, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    // None for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
}

pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.params.get(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, NumericsError> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// Gathers rows of a 2-D table; `None` rows are zero and receive no gradient.
    pub fn lookup(&mut self, table: ParamId, rows: &[Option<usize>]) -> Result<Var, NumericsError> {
        let t = self.params.get(table);
        if t.rank() != 2 || rows.is_empty() {
            return Err(mismatch("lookup", t.shape(), &[rows.len()]));
        }
        let (n_rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            match row {
                Some(r) if *r < n_rows => out.extend_from_slice(&t.data()[r * dim..(r + 1) * dim]),
                Some(r) => return Err(NumericsError::IndexOutOfRange { index: *r, len: n_rows }),
                None => out.extend(std::iter::repeat_n(T::zero(), dim)),
            }
        }
        let value = Tensor::new(vec![rows.len(), dim], out)?;
        Ok(self.push(
            Op::Lookup {
                table,
                rows: rows.to_vec(),
            },
            value,
        ))
    }

    /// `w · x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 1 || wv.rank() != 2 || wv.shape()[1] != xv.len() {
            return Err(mismatch("linear", wv.shape(), xv.shape()));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [rows] {
            return Err(mismatch("linear(bias)", wv.shape(), bv.shape()));
        }
        let xs = xv.data();
        let out: Vec<T> = (0..rows)
            .map(|r| {
                let row = &wv.data()[r * cols..(r + 1) * cols];
                row.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>() + bv.data()[r]
            })
            .collect();
        let value = Tensor::vector(out);
        Ok(self.push(Op::Linear { x, w, b }, value))
    }

    /// `a · bᵀ` for matrices `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(mismatch("matmul_nt", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &av.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv.data()[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMulNt { a, b }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * k).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(a, k), value)
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(mismatch("concat", &[], &[]));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::vector(out);
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    /// Mean over the rows of a matrix `[n, d]`, giving `[d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(mismatch("mean_rows", av.shape(), &[]));
        }
        let (n, d) = (av.shape()[0], av.shape()[1]);
        let mut out = vec![T::zero(); d];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(&av.data()[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let inv = T::one() / T::from_usize_lossy(n);
        out.iter_mut().for_each(|o| *o *= inv);
        let value = Tensor::vector(out);
        Ok(self.push(Op::MeanRows(a), value))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x < T::zero() { T::zero() } else { x }).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu(a), value)
    }

    /// `x / ‖x‖`; the zero vector maps to itself with zero gradient.
    pub fn unit_normalize(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(mismatch("unit_normalize", xv.shape(), &[]));
        }
        let norm = xv.norm();
        let data = if norm > T::zero() || norm.is_nan() {
            xv.data().iter().map(|&v| v / norm).collect()
        } else {
            vec![T::zero(); xv.len()]
        };
        let value = Tensor::vector(data);
        Ok(self.push(Op::UnitNormalize { x, norm }, value))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }

    /// Valid (unpadded) 2-D convolution, stride 1.
    ///
    /// `x: [c_in, h, w]`, `kernel: [c_out, c_in, kh, kw]`, `bias: [c_out]`
    /// giving `[c_out, h - kh + 1, w - kw + 1]`.
    pub fn conv2d_valid(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var, NumericsError> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        if xv.rank() != 3 || kv.rank() != 4 || kv.shape()[1] != xv.shape()[0] {
            return Err(mismatch("conv2d_valid", xv.shape(), kv.shape()));
        }
        let [c_in, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
        let [c_out, _, kh, kw] = [kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]];
        if kh > h || kw > w || bv.shape() != [c_out] {
            return Err(mismatch("conv2d_valid", xv.shape(), kv.shape()));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![T::zero(); c_out * oh * ow];
        let (xd, kd) = (xv.data(), kv.data());
        for o in 0..c_out {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bv.data()[o]);
            for c in 0..c_in {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wgt = kd[((o * c_in + c) * kh + ki) * kw + kj];
                        for i in 0..oh {
                            let src = &xd[(c * h + i + ki) * w + kj..][..ow];
                            let dst = &mut plane[i * ow..(i + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        Ok(self.push(Op::Conv2d { x, kernel, bias }, value))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.rank() != 3 || xv.shape()[1] < 2 || xv.shape()[2] < 2 {
            return Err(mismatch("maxpool2d", xv.shape(), &[2, 2]));
        }
        let [c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = (ch * h + 2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
                        let (v, b) = (xv.data()[idx], xv.data()[best]);
                        // NaN wins so that it reaches the loss.
                        if !b.is_nan() && (v.is_nan() || v > b) {
                            best = idx;
                        }
                    }
                    argmax.push(best);
                    out.push(xv.data()[best]);
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2d { x, argmax }, value))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        if av.rank() != 1 {
            return Err(mismatch("softmax", av.shape(), &[]));
        }
        let value = Tensor::vector(softmax(av.data()));
        Ok(self.push(Op::Softmax(a), value))
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn nll_loss(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(mismatch("nll_loss", lv.shape(), &[]));
        }
        if target >= lv.len() {
            return Err(NumericsError::IndexOutOfRange {
                index: target,
                len: lv.len(),
            });
        }
        let lse = log_sum_exp(lv.data());
        let loss = lse - lv.data()[target];
        let probs = softmax(lv.data());
        Ok(self.push(Op::Nll { logits, target, probs }, Tensor::scalar(loss)))
    }

    /// Gradients of the scalar `output` with respect to every parameter of the store.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, NumericsError> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(mismatch("backward", out_value.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::new(out_value.shape().to_vec(), vec![T::one()])?);
        let mut param_grads = Gradients::zeros_like(self.params);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if let Some(pg) = param_grads.get_mut(*id) {
                        pg.add_assign(&g);
                    }
                }
                Op::Lookup { table, rows } => {
                    if let Some(pg) = param_grads.get_mut(*table) {
                        let dim = pg.shape()[1];
                        for (r, row) in rows.iter().enumerate() {
                            if let Some(row) = row {
                                let dst = &mut pg.data_mut()[row * dim..(row + 1) * dim];
                                for (d, &s) in dst.iter_mut().zip(&g.data()[r * dim..(r + 1) * dim]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let cols = wv.shape()[1];
                    let mut gx = vec![T::zero(); cols];
                    let mut gw = vec![T::zero(); wv.len()];
                    for (r, &gr) in g.data().iter().enumerate() {
                        let wrow = &wv.data()[r * cols..(r + 1) * cols];
                        for (gxi, &wi) in gx.iter_mut().zip(wrow) {
                            *gxi += gr * wi;
                        }
                        for (gwi, &xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv.data()) {
                            *gwi = gr * xi;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::vector(gx));
                    accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), gw)?);
                    accumulate(&mut grads, *b, g);
                }
                Op::MatMulNt { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                    let mut ga = vec![T::zero(); m * k];
                    let mut gb = vec![T::zero(); n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for t in 0..k {
                                ga[i * k + t] += gij * bv.data()[j * k + t];
                                gb[j * k + t] += gij * av.data()[i * k + t];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, k], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![n, k], gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let gb = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), ga)?);
                    accumulate(&mut grads, *b, Tensor::new(g.shape().to_vec(), gb)?);
                }
                Op::Scale(a, k) => {
                    let mut ga = g;
                    ga.scale_assign(*k);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let len = self.value(p).len();
                        let piece = g.data()[offset..offset + len].to_vec();
                        accumulate(&mut grads, p, Tensor::new(shape, piece)?);
                        offset += len;
                    }
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.shape()[0];
                    let inv = T::one() / T::from_usize_lossy(n);
                    let row: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                    let data = row.iter().copied().cycle().take(av.len()).collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), data)?);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::UnitNormalize { x, norm } => {
                    let y = node.value.as_ref().expect("value");
                    let data = if *norm > T::zero() || norm.is_nan() {
                        let dot: T = y.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| (gv - yv * dot) / *norm)
                            .collect()
                    } else {
                        vec![T::zero(); g.len()]
                    };
                    accumulate(&mut grads, *x, Tensor::vector(data));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshaped(&shape)?);
                }
                Op::Conv2d { x, kernel, bias } => {
                    let (xv, kv) = (self.value(*x), self.value(*kernel));
                    let [c_in, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
                    let [c_out, _, kh, kw] =
                        [kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]];
                    let (oh, ow) = (h - kh + 1, w - kw + 1);
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gk = vec![T::zero(); kv.len()];
                    let mut gb = vec![T::zero(); c_out];
                    let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
                    for o in 0..c_out {
                        let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
                        gb[o] = gplane.iter().copied().sum();
                        for c in 0..c_in {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let kidx = ((o * c_in + c) * kh + ki) * kw + kj;
                                    let wgt = kd[kidx];
                                    let mut acc = T::zero();
                                    for i in 0..oh {
                                        let base = (c * h + i + ki) * w + kj;
                                        let grow = &gplane[i * ow..(i + 1) * ow];
                                        let xrow = &xd[base..base + ow];
                                        acc += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                                        for (dst, &gv) in gx[base..base + ow].iter_mut().zip(grow) {
                                            *dst += wgt * gv;
                                        }
                                    }
                                    gk[kidx] += acc;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                    accumulate(&mut grads, *kernel, Tensor::new(kv.shape().to_vec(), gk)?);
                    accumulate(&mut grads, *bias, Tensor::vector(gb));
                }
                Op::MaxPool2d { x, argmax } => {
                    let xv = self.value(*x);
                    let mut gx = vec![T::zero(); xv.len()];
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gx[src] += gv;
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().expect("value");
                    let dot: T = y.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| yv * (gv - dot))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Nll { logits, target, probs } => {
                    let gl = g.item();
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let onehot = if i == *target { T::one() } else { T::zero() };
                            gl * (p - onehot)
                        })
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::vector(data));
                }
            }
        }
        Ok(param_grads)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
