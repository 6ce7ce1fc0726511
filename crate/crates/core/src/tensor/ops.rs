//! Differentiable operations on [`Var`].

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::kernels::{self, ConvGeom, ConvTGeom};
use crate::tensor::storage::{Float, Tensor};
use crate::tensor::tape::{Op, Tape, Var};

impl<'t, T: Float> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    fn same_tape(&self, other: &Var<'_, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{op}: operands recorded on different tapes")))
        }
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: fn(usize, usize) -> Op<T>,
    ) -> Result<Self> {
        self.same_tape(&other, name)?;
        let (a, b) = (self.value(), other.value());
        let out_shape = kernels::broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| shape_err(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
        let data = kernels::broadcast_binary(a.data(), a.shape(), b.data(), b.shape(), &out_shape, f);
        self.tape.push(name, Tensor::from_parts(out_shape, data), op(self.id, other.id), &[self.id, other.id])
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "div", |x, y| x / y, Op::Div)
    }

    /// `scale·x + shift`.
    pub fn affine(self, scale: T, shift: T) -> Result<Self> {
        let v = self.value().map(|x| scale * x + shift);
        self.tape.push("affine", v, Op::Affine { x: self.id, scale }, &[self.id])
    }

    pub fn scale(self, s: T) -> Result<Self> {
        self.affine(s, T::zero())
    }

    pub fn add_scalar(self, s: T) -> Result<Self> {
        self.affine(T::one(), s)
    }

    pub fn neg(self) -> Result<Self> {
        self.affine(-T::one(), T::zero())
    }

    /// Matrix product over the last two axes: `[…, m, k] · […, k, n]`, where the
    /// right operand may also be a plain `[k, n]` matrix shared by every batch.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Self> {
        self.same_tape(&other, "matmul")?;
        let (a, b) = (self.value(), other.value());
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(shape_err("matmul", format!("operands must be at least 2-D: {ash:?}, {bsh:?}")));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let shared_b = bsh.len() == 2;
        if k != k2 || (!shared_b && ash[..ash.len() - 2] != bsh[..bsh.len() - 2]) {
            return Err(shape_err("matmul", format!("{ash:?} · {bsh:?}")));
        }
        let batches = a.numel() / (m * k);
        let mut out = vec![T::zero(); batches * m * n];
        for bi in 0..batches {
            let bsl = if shared_b { b.data() } else { &b.data()[bi * k * n..][..k * n] };
            kernels::gemm_nn(m, k, n, &a.data()[bi * m * k..][..m * k], bsl, &mut out[bi * m * n..][..m * n]);
        }
        let mut shape = ash[..ash.len() - 2].to_vec();
        shape.extend([m, n]);
        self.tape.push(
            "matmul",
            Tensor::from_parts(shape, out),
            Op::MatMul { a: self.id, b: other.id },
            &[self.id, other.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let v = self.value().reshape(shape)?;
        self.tape.push("reshape", v, Op::Reshape(self.id), &[self.id])
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} is not a permutation of {} axes", shape.len())));
        }
        let data = kernels::permute(self.value().data(), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        self.tape.push(
            "permute",
            Tensor::from_parts(out_shape, data),
            Op::Permute { x: self.id, perm: perm.to_vec() },
            &[self.id],
        )
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Self> {
        let mut perm: Vec<usize> = (0..self.shape().len()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(shape_err("transpose", format!("axes {a},{b} for rank {}", perm.len())));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err("narrow", format!("[{start}, {start}+{len}) on axis {axis} of {shape:?}")));
        }
        let (outer, full, inner) = kernels::axis_split(&shape, axis);
        let src = self.value();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.tape.push(
            "narrow",
            Tensor::from_parts(out_shape, data),
            Op::Narrow { x: self.id, axis, start },
            &[self.id],
        )
    }

    /// Sum down to `shape`, which must broadcast to this variable's shape.
    pub fn sum_to(self, shape: &[usize]) -> Result<Self> {
        let own = self.shape();
        if kernels::broadcast_shape(shape, &own).as_deref() != Some(&own[..]) {
            return Err(shape_err("sum_to", format!("{own:?} cannot reduce to {shape:?}")));
        }
        let data = kernels::sum_to(self.value().data(), &own, shape);
        self.tape.push("sum_to", Tensor::from_parts(shape.to_vec(), data), Op::SumTo(self.id), &[self.id])
    }

    /// Sum over all elements, as a rank-0 tensor.
    pub fn sum(self) -> Result<Self> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.numel();
        self.sum()?.scale(T::one() / T::lit(n as f64))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(self, axes: &[usize]) -> Result<Self> {
        let mut target = self.shape();
        for &a in axes {
            if a >= target.len() {
                return Err(shape_err("sum_axes", format!("axis {a} for rank {}", target.len())));
            }
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    /// Mean over `axes`, keeping them as size-1 dimensions.
    pub fn mean_axes(self, axes: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        self.sum_axes(axes)?.scale(T::one() / T::lit(count as f64))
    }

    fn unary(self, name: &'static str, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Result<Self> {
        let v = self.value().map(f);
        self.tape.push(name, v, op(self.id), &[self.id])
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF from `erf`.
    pub fn gelu(self) -> Result<Self> {
        self.unary("gelu", gelu, Op::Gelu)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", sigmoid, Op::Sigmoid)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary("relu", |x| x.max(T::zero()), Op::Relu)
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", |x| x.exp(), Op::Exp)
    }

    pub fn ln(self) -> Result<Self> {
        self.unary("ln", |x| x.ln(), Op::Ln)
    }

    fn axis_check(&self, axis: usize, op: &'static str) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(shape_err(op, format!("axis {axis} for shape {shape:?}")));
        }
        Ok(shape)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Self> {
        let shape = self.axis_check(axis, "softmax")?;
        let (o, l, i) = kernels::axis_split(&shape, axis);
        let data = kernels::softmax(self.value().data(), o, l, i, false);
        self.tape.push("softmax", Tensor::from_parts(shape, data), Op::Softmax { x: self.id, axis }, &[self.id])
    }

    pub fn log_softmax(self, axis: usize) -> Result<Self> {
        let shape = self.axis_check(axis, "log_softmax")?;
        let (o, l, i) = kernels::axis_split(&shape, axis);
        let data = kernels::softmax(self.value().data(), o, l, i, true);
        self.tape.push(
            "log_softmax",
            Tensor::from_parts(shape, data),
            Op::LogSoftmax { x: self.id, axis },
            &[self.id],
        )
    }

    /// Normalizes each group formed by the trailing `dims` axes to zero mean
    /// and unit (biased) variance: `(x − μ)/√(σ² + eps)`.
    pub fn standardize(self, dims: usize, eps: T) -> Result<Self> {
        let shape = self.shape();
        if dims == 0 || dims > shape.len() {
            return Err(shape_err("standardize", format!("{dims} trailing axes of {shape:?}")));
        }
        let group: usize = shape[shape.len() - dims..].iter().product();
        let (data, rstd) = kernels::standardize(self.value().data(), group, eps);
        self.tape.push(
            "standardize",
            Tensor::from_parts(shape, data),
            Op::Standardize { x: self.id, group, rstd },
            &[self.id],
        )
    }

    /// Layer normalization over the last axis followed by `γ·x̂ + β`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Self> {
        let d = *self.shape().last().ok_or_else(|| shape_err("layer_norm", "rank-0 input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err("layer_norm", format!("affine params must be [{d}]")));
        }
        self.standardize(1, eps)?.mul(gamma)?.add(beta)
    }

    /// 2-D cross-correlation of `B×C×H×W` input with `O×C×KH×KW` weights.
    pub fn conv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, stride: usize, padding: usize) -> Result<Self> {
        self.same_tape(&w, "conv2d")?;
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride == 0 {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}, stride {stride}")));
        }
        let (hp, wp) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if hp < ws[2] || wp < ws[3] || (hp - ws[2]) % stride != 0 || (wp - ws[3]) % stride != 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} stride {stride} does not tile padded input {hp}×{wp}", &ws[2..]),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            padding,
            oh: (hp - ws[2]) / stride + 1,
            ow: (wp - ws[3]) / stride + 1,
        };
        let bias = b.map(|b| check_bias(b, geom.out_ch, "conv2d")).transpose()?;
        let data = kernels::conv2d_forward(&geom, self.value().data(), w.value().data(), bias.as_ref().map(|t| t.data()));
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        self.tape.push(
            "conv2d",
            Tensor::from_parts(vec![geom.batch, geom.out_ch, geom.oh, geom.ow], data),
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            &inputs,
        )
    }

    /// Transposed convolution with `C×O×KH×KW` weights, no padding.
    pub fn conv_transpose2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, stride: usize) -> Result<Self> {
        self.same_tape(&w, "conv_transpose2d")?;
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || stride == 0 {
            return Err(shape_err("conv_transpose2d", format!("input {xs:?}, weight {ws:?}, stride {stride}")));
        }
        let geom = ConvTGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            oh: (xs[2] - 1) * stride + ws[2],
            ow: (xs[3] - 1) * stride + ws[3],
        };
        let bias = b.map(|b| check_bias(b, geom.out_ch, "conv_transpose2d")).transpose()?;
        let data = kernels::conv_transpose2d_forward(
            &geom,
            self.value().data(),
            w.value().data(),
            bias.as_ref().map(|t| t.data()),
        );
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        self.tape.push(
            "conv_transpose2d",
            Tensor::from_parts(vec![geom.batch, geom.out_ch, geom.oh, geom.ow], data),
            Op::ConvT2d { x: self.id, w: w.id, b: b.map(|b| b.id), geom },
            &inputs,
        )
    }

    fn pool_geometry(&self, k: usize, op: &'static str) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.shape();
        if shape.len() < 2 || k == 0 {
            return Err(shape_err(op, format!("window {k} on {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h % k != 0 || w % k != 0 {
            return Err(shape_err(op, format!("{h}×{w} not divisible by window {k}")));
        }
        let mut out = shape.clone();
        let r = out.len();
        out[r - 2] = h / k;
        out[r - 1] = w / k;
        Ok((out, self.numel() / (h * w), h, w))
    }

    /// Non-overlapping `k×k` average pooling over the last two axes.
    pub fn avg_pool2d(self, k: usize) -> Result<Self> {
        let (out, planes, h, w) = self.pool_geometry(k, "avg_pool2d")?;
        let data = kernels::avg_pool(self.value().data(), planes, h, w, k);
        self.tape.push("avg_pool2d", Tensor::from_parts(out, data), Op::AvgPool { x: self.id, k }, &[self.id])
    }

    /// Non-overlapping `k×k` max pooling; the first maximum takes the gradient.
    pub fn max_pool2d(self, k: usize) -> Result<Self> {
        let (out, planes, h, w) = self.pool_geometry(k, "max_pool2d")?;
        let (data, argmax) = kernels::max_pool(self.value().data(), planes, h, w, k);
        self.tape.push("max_pool2d", Tensor::from_parts(out, data), Op::MaxPool { x: self.id, argmax }, &[self.id])
    }

    /// Spatial mean of a `B×C×H×W` map, giving `B×C×1×1`.
    pub fn global_avg_pool(self) -> Result<Self> {
        if self.shape().len() != 4 {
            return Err(shape_err("global_avg_pool", format!("expected B×C×H×W, got {:?}", self.shape())));
        }
        self.mean_axes(&[2, 3])
    }

    /// Inverted dropout: in training, zeroes entries with probability `p` and
    /// scales survivors by `1/(1−p)`. Identity otherwise, and when `p == 0`.
    pub fn dropout(self, p: f64, training: bool, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(self);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let x = self.value();
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.tape.push(
            "dropout",
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::Dropout { x: self.id, mask },
            &[self.id],
        )
    }
}

fn check_bias<T: Float>(b: Var<'_, T>, out_ch: usize, op: &'static str) -> Result<Tensor<T>> {
    let v = b.value();
    if v.shape() != [out_ch] {
        return Err(shape_err(op, format!("bias {:?} for {out_ch} output channels", v.shape())));
    }
    Ok(v)
}

impl<T: Float> Tape<T> {
    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?.shape();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..][..len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat { inputs: ids.clone(), axis }, &ids)
    }
}

/// Exact GELU on a scalar.
pub fn gelu<T: Float>(x: T) -> T {
    let xf = x.as_f64();
    T::lit(0.5 * xf * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2)))
}

/// Logistic sigmoid on a scalar, evaluated without overflow.
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
