//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! Every operation appends one node holding its forward value. `backward`
//! consumes the tape and walks the nodes once in reverse order, producing
//! gradients for the parameter leaves that the loss depends on.

use crate::error::{Error, Result};
use crate::numerics::param::{Gradients, ParamId, ParamStore};
use crate::numerics::tensor::matmul_into;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Value<'p, S> {
    Owned(Tensor<S>),
    Borrowed(&'p Tensor<S>),
}

impl<S> Value<'_, S> {
    fn get(&self) -> &Tensor<S> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Abs(Var),
    Powf(Var, S),
    ClampMin(Var, S),
    Sum(Var),
    RowSum(Var),
    Softmax(Var),
    Reshape(Var),
    Index0(Var, usize),
    Stack(Vec<Var>),
    Concat(Vec<Var>, usize),
    Permute01(Var),
    ScaleChannels(Var, Var),
    MulScalar(Var, Var),
    Pick(Var, usize),
    CrossRows(Var, Var),
    ChannelMix(Var, Var),
}

#[derive(Debug)]
struct Node<'p, S> {
    value: Value<'p, S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recording of one forward computation. Parameter leaves borrow their values
/// from a [`ParamStore`] for the tape's lifetime.
#[derive(Debug)]
pub struct Tape<'p, S: Scalar = f64> {
    nodes: Vec<Node<'p, S>>,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// A leaf bound to a parameter; its gradient is reported by `backward`
    /// when the parameter is trainable.
    pub fn param(&mut self, store: &'p ParamStore<S>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.value),
            op: Op::Leaf(Some(id)),
            needs_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<S>, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), name, f)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "hadamard", |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    /// `a * mul + add`, elementwise with scalar constants.
    pub fn affine(&mut self, a: Var, mul: S, add: S) -> Var {
        self.unary(a, Op::Affine(a, mul), |x| x * mul + add)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.affine(a, c, S::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(S::zero()))
    }

    /// `max(x, slope * x)` for `0 < slope < 1`.
    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > S::zero() { x } else { slope * x })
    }

    /// Elementwise `|x|`; the recorded subgradient is `sign(x)` with 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    /// Elementwise `x^e` for positive inputs.
    pub fn powf(&mut self, a: Var, e: S) -> Var {
        self.unary(a, Op::Powf(a, e), |x| x.powf(e))
    }

    pub fn clamp_min(&mut self, a: Var, lo: S) -> Var {
        self.unary(a, Op::ClampMin(a, lo), |x| x.max(lo))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Sums each row of a rank-2 tensor, giving a vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("row_sum")?;
        let out = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().copied().sum()).collect();
        let ng = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::RowSum(a), ng))
    }

    /// Softmax along the last axis of a vector or matrix, with the row
    /// maximum subtracted before exponentiation.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = match t.shape() {
            [n] => *n,
            [_, n] => *n,
            s => return Err(Error::dim("softmax", format!("expected rank 1 or 2, got {s:?}"))),
        };
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(width) {
            softmax_in_place(row);
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn index0(&mut self, a: Var, i: usize) -> Result<Var> {
        let out = self.value(a).index0(i)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Index0(a, i), ng))
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("stack", "no inputs"));
        };
        let inner = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(inner.iter().product::<usize>() * parts.len());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(Error::dim(
                    "stack",
                    format!("shape {:?} differs from {:?}", self.shape(p), inner),
                ));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let out = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Stack(parts.to_vec()), ng))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s[..axis] == base[..axis]
                && s[axis + 1..] == base[axis + 1..];
            if !ok {
                return Err(Error::dim("concat", format!("shape {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Swaps the first two axes of a rank-3 tensor.
    pub fn permute01(&mut self, a: Var) -> Result<Var> {
        let out = permute01(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Permute01(a), ng))
    }

    /// Multiplies channel `c` by `s[c]`. The channel axis is axis 0 of a
    /// rank-2 `x` and axis 1 of a rank-3 `x`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (outer, ch, inner) = channel_dims(self.value(x))?;
        let sv = self.value(s);
        if sv.len() != ch {
            return Err(Error::dim(
                "scale_channels",
                format!("{} scales for {ch} channels", sv.len()),
            ));
        }
        let mut out = self.value(x).clone();
        let sd = sv.data().to_vec();
        for o in 0..outer {
            for (c, &sc) in sd.iter().enumerate() {
                let base = (o * ch + c) * inner;
                for v in &mut out.data_mut()[base..base + inner] {
                    *v *= sc;
                }
            }
        }
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(out, Op::ScaleChannels(x, s), ng))
    }

    /// `a * s` where `s` holds exactly one value.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(a).map(|x| x * sv);
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(out, Op::MulScalar(a, s), ng))
    }

    /// The element at flat index `i`, as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let v = *t
            .data()
            .get(i)
            .ok_or_else(|| Error::dim("pick", format!("index {i} >= {}", t.len())))?;
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, i), ng))
    }

    /// Pairwise row products per leading slice:
    /// `out[t, m*K + k, :] = a[t, m, :] * b[t, k, :]` for `a: [T,M,d]`, `b: [T,K,d]`.
    pub fn cross_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, m, da) = self.value(a).dims3("cross_rows")?;
        let (tb, k, db) = self.value(b).dims3("cross_rows")?;
        if ta != tb || da != db {
            return Err(Error::dim(
                "cross_rows",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ta * m * k * da);
        for t in 0..ta {
            for mi in 0..m {
                let ar = &av[(t * m + mi) * da..(t * m + mi + 1) * da];
                for ki in 0..k {
                    let br = &bv[(t * k + ki) * da..(t * k + ki + 1) * da];
                    data.extend(ar.iter().zip(br).map(|(&x, &y)| x * y));
                }
            }
        }
        let out = Tensor::new([ta, m * k, da], data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::CrossRows(a, b), ng))
    }

    /// Pointwise channel mixing: `out[t, o, :] = sum_c w[c, o] * x[t, c, :]`.
    pub fn channel_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (t, c, d) = self.value(x).dims3("channel_mix")?;
        let (wc, o) = self.value(w).dims2("channel_mix")?;
        if wc != c {
            return Err(Error::dim(
                "channel_mix",
                format!("{c} input channels but weight is {:?}", self.shape(w)),
            ));
        }
        let wt = self.value(w).transpose()?;
        let xv = self.value(x).data();
        let mut data = vec![S::zero(); t * o * d];
        for ti in 0..t {
            matmul_into(
                wt.data(),
                &xv[ti * c * d..(ti + 1) * c * d],
                &mut data[ti * o * d..(ti + 1) * o * d],
                o,
                c,
                d,
            );
        }
        let out = Tensor::new([t, o, d], data)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::ChannelMix(x, w), ng))
    }

    /// Runs the reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), S::one()));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.get();
            let val = |v: Var| self.nodes[v.0].value.get();
            let emit = |v: Var, t: Tensor<S>, grads: &mut Vec<Option<Tensor<S>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_scaled(&t, S::one()).expect("gradient shape"),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf(Some(id)) => out.push(*id, g),
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        emit(*a, g.matmul(&val(*b).transpose()?)?, &mut grads);
                    }
                    if self.needs(*b) {
                        emit(*b, val(*a).transpose()?.matmul(&g)?, &mut grads);
                    }
                }
                Op::Transpose(a) => emit(*a, g.transpose()?, &mut grads),
                Op::Add(a, b) => {
                    emit(*a, g.clone(), &mut grads);
                    emit(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    emit(*a, g.clone(), &mut grads);
                    emit(*b, g.map(|x| -x), &mut grads);
                }
                Op::Mul(a, b) => {
                    emit(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?, &mut grads);
                    emit(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?, &mut grads);
                }
                Op::Affine(a, m) => emit(*a, g.map(|x| x * *m), &mut grads),
                Op::Sigmoid(a) => {
                    emit(*a, g.zip_map(y, "sigmoid", |g, y| g * y * (S::one() - y))?, &mut grads)
                }
                Op::Tanh(a) => emit(*a, g.zip_map(y, "tanh", |g, y| g * (S::one() - y * y))?, &mut grads),
                Op::Relu(a) => emit(
                    *a,
                    g.zip_map(val(*a), "relu", |g, x| if x > S::zero() { g } else { S::zero() })?,
                    &mut grads,
                ),
                Op::LeakyRelu(a, slope) => emit(
                    *a,
                    g.zip_map(val(*a), "leaky_relu", |g, x| if x > S::zero() { g } else { g * *slope })?,
                    &mut grads,
                ),
                Op::Abs(a) => emit(
                    *a,
                    g.zip_map(val(*a), "abs", |g, x| {
                        if x > S::zero() {
                            g
                        } else if x < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })?,
                    &mut grads,
                ),
                Op::Powf(a, e) => emit(
                    *a,
                    g.zip_map(val(*a), "powf", |g, x| g * *e * x.powf(*e - S::one()))?,
                    &mut grads,
                ),
                Op::ClampMin(a, lo) => emit(
                    *a,
                    g.zip_map(val(*a), "clamp_min", |g, x| if x > *lo { g } else { S::zero() })?,
                    &mut grads,
                ),
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    emit(*a, Tensor::full(val(*a).shape().to_vec(), gv), &mut grads)
                }
                Op::RowSum(a) => {
                    let (r, c) = val(*a).dims2("row_sum")?;
                    let gd = g.data();
                    emit(*a, Tensor::from_fn([r, c], |i| gd[i / c]), &mut grads)
                }
                Op::Softmax(a) => {
                    let width = *y.shape().last().expect("softmax rank >= 1");
                    let mut dx = g.clone();
                    for ((dr, yr), gr) in dx
                        .data_mut()
                        .chunks_mut(width)
                        .zip(y.data().chunks(width))
                        .zip(g.data().chunks(width))
                    {
                        let dot: S = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                        for ((d, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = y * (g - dot);
                        }
                    }
                    emit(*a, dx, &mut grads)
                }
                Op::Reshape(a) => emit(*a, g.reshape(val(*a).shape().to_vec())?, &mut grads),
                Op::Index0(a, i) => {
                    let src = val(*a);
                    let stride = src.len() / src.shape()[0];
                    let mut dx = Tensor::zeros(src.shape().to_vec());
                    dx.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(g.data());
                    emit(*a, dx, &mut grads)
                }
                Op::Stack(parts) => {
                    let stride = g.len() / parts.len();
                    for (i, &p) in parts.iter().enumerate() {
                        let piece = Tensor::new(
                            val(p).shape().to_vec(),
                            g.data()[i * stride..(i + 1) * stride].to_vec(),
                        )?;
                        emit(p, piece, &mut grads);
                    }
                }
                Op::Concat(parts, axis) => {
                    let shape = y.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let ps = val(p).shape().to_vec();
                        let chunk = ps[*axis] * inner;
                        let mut data = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            data.extend_from_slice(&g.data()[o * row + offset..o * row + offset + chunk]);
                        }
                        offset += chunk;
                        emit(p, Tensor::new(ps, data)?, &mut grads);
                    }
                }
                Op::Permute01(a) => emit(*a, permute01(&g)?, &mut grads),
                Op::ScaleChannels(x, s) => {
                    let xv = val(*x);
                    let sv = val(*s).data();
                    let (outer, ch, inner) = channel_dims(xv)?;
                    let mut dx = g.clone();
                    let mut ds = vec![S::zero(); ch];
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = (o * ch + c) * inner;
                            for j in base..base + inner {
                                ds[c] += g.data()[j] * xv.data()[j];
                                dx.data_mut()[j] *= sv[c];
                            }
                        }
                    }
                    emit(*x, dx, &mut grads);
                    emit(*s, Tensor::new(val(*s).shape().to_vec(), ds)?, &mut grads);
                }
                Op::MulScalar(a, s) => {
                    let sv = val(*s).data()[0];
                    let av = val(*a);
                    let ds: S = g.data().iter().zip(av.data()).map(|(&g, &x)| g * x).sum();
                    emit(*a, g.map(|x| x * sv), &mut grads);
                    emit(*s, Tensor::full(val(*s).shape().to_vec(), ds), &mut grads);
                }
                Op::Pick(a, i) => {
                    let mut dx = Tensor::zeros(val(*a).shape().to_vec());
                    dx.data_mut()[*i] = g.data()[0];
                    emit(*a, dx, &mut grads)
                }
                Op::CrossRows(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (t, m, d) = av.dims3("cross_rows")?;
                    let k = bv.shape()[1];
                    let mut da = Tensor::zeros(av.shape().to_vec());
                    let mut db = Tensor::zeros(bv.shape().to_vec());
                    let gd = g.data();
                    for ti in 0..t {
                        for mi in 0..m {
                            let ao = (ti * m + mi) * d;
                            for ki in 0..k {
                                let bo = (ti * k + ki) * d;
                                let go = ((ti * m + mi) * k + ki) * d;
                                for j in 0..d {
                                    da.data_mut()[ao + j] += gd[go + j] * bv.data()[bo + j];
                                    db.data_mut()[bo + j] += gd[go + j] * av.data()[ao + j];
                                }
                            }
                        }
                    }
                    emit(*a, da, &mut grads);
                    emit(*b, db, &mut grads);
                }
                Op::ChannelMix(x, w) => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (t, c, d) = xv.dims3("channel_mix")?;
                    let o = wv.shape()[1];
                    let gd = g.data();
                    if self.needs(*x) {
                        let mut dx = vec![S::zero(); t * c * d];
                        for ti in 0..t {
                            matmul_into(
                                wv.data(),
                                &gd[ti * o * d..(ti + 1) * o * d],
                                &mut dx[ti * c * d..(ti + 1) * c * d],
                                c,
                                o,
                                d,
                            );
                        }
                        emit(*x, Tensor::new([t, c, d], dx)?, &mut grads);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![S::zero(); c * o];
                        for ti in 0..t {
                            let xs = &xv.data()[ti * c * d..(ti + 1) * c * d];
                            let gs = &gd[ti * o * d..(ti + 1) * o * d];
                            for ci in 0..c {
                                for oi in 0..o {
                                    let mut acc = S::zero();
                                    for j in 0..d {
                                        acc += xs[ci * d + j] * gs[oi * d + j];
                                    }
                                    dw[ci * o + oi] += acc;
                                }
                            }
                        }
                        emit(*w, Tensor::new([c, o], dw)?, &mut grads);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn permute01<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    let (a, b, c) = t.dims3("permute01")?;
    let mut out = Vec::with_capacity(t.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&t.data()[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    Tensor::new([b, a, c], out)
}

fn channel_dims<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c] => Ok((1, *c, 1)),
        [c, i] => Ok((1, *c, *i)),
        [o, c, i] => Ok((*o, *c, *i)),
        s => Err(Error::dim("scale_channels", format!("unsupported shape {s:?}"))),
    }
}
