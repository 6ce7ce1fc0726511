//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order. [`Tape::backward`] walks the
//! records once in reverse and accumulates vector-Jacobian products.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeom, ConvTGeom};
use crate::tensor::storage::{Float, Tensor};

pub(crate) type NodeId = usize;

/// Backward record of one operation. Input values are read back from the
/// tape; only what cannot be recomputed cheaply is saved here.
pub(crate) enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `y = scale·x + shift`
    Affine { x: NodeId, scale: T },
    MatMul { a: NodeId, b: NodeId },
    Reshape(NodeId),
    Permute { x: NodeId, perm: Vec<usize> },
    Narrow { x: NodeId, axis: usize, start: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    /// Sum of a broadcast input down to the node's shape.
    SumTo(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Softmax { x: NodeId, axis: usize },
    LogSoftmax { x: NodeId, axis: usize },
    Standardize { x: NodeId, group: usize, rstd: Vec<T> },
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom },
    ConvT2d { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvTGeom },
    AvgPool { x: NodeId, k: usize },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    Dropout { x: NodeId, mask: Vec<T> },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Operation record for one forward pass.
///
/// A tape and its variables stay on the thread that created them.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: NodeId,
}

impl<T: Float> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Float> Copy for Var<'_, T> {}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    /// A tape that records backward information.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that only evaluates; [`Tape::backward`] fails on it.
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, self.recording)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, false)
    }

    fn push_node(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if needs_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// Records an op output after checking it is finite.
    pub(crate) fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[NodeId],
    ) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFiniteValue { op: name });
        }
        let needs_grad = self.recording && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].needs_grad)
        };
        Ok(self.push_node(value, op, needs_grad))
    }

    pub(crate) fn value(&self, id: NodeId) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    fn owns(&self, var: &Var<'_, T>) -> bool {
        std::ptr::eq(self, var.tape)
    }

    /// Back-propagates from a scalar `loss` recorded on this tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !self.owns(&loss) || !self.recording {
            return Err(Error::DetachedTensor);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.needs_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let (lower, _) = grads.split_at_mut(id);
            let mut acc = |input: NodeId, contrib: Vec<T>| {
                if nodes[input].needs_grad {
                    accumulate(&mut lower[input], contrib);
                }
            };
            backward_node(&nodes, node, &g, &mut acc);
        }
        let leaves = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                g.filter(|_| matches!(n.op, Op::Leaf))
                    .map(|g| Tensor::from_parts(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { leaves })
    }
}

fn accumulate<T: Float>(slot: &mut Option<Vec<T>>, contrib: Vec<T>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
        None => *slot = Some(contrib),
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient for a leaf, `None` when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, zeros when the loss does not depend on it.
    pub fn wrt_or_zero(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.wrt(var) {
            Some(g) => g.clone(),
            None => {
                let shape = var.shape();
                Tensor::from_parts(shape.clone(), vec![T::zero(); shape.iter().product()])
            }
        }
    }
}

fn gelu_grad<T: Float>(x: T) -> T {
    let xf = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::lit(cdf + xf * pdf)
}

fn backward_node<T: Float>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    acc: &mut impl FnMut(NodeId, Vec<T>),
) {
    let out_shape = node.value.shape();
    let val = |id: NodeId| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(*a, kernels::sum_to(g, out_shape, val(*a).shape()));
            acc(*b, kernels::sum_to(g, out_shape, val(*b).shape()));
        }
        Op::Sub(a, b) => {
            acc(*a, kernels::sum_to(g, out_shape, val(*a).shape()));
            let gb = kernels::sum_to(g, out_shape, val(*b).shape());
            acc(*b, gb.into_iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                let prod = kernels::broadcast_binary(g, out_shape, vb.data(), vb.shape(), out_shape, |x, y| x * y);
                acc(*a, kernels::sum_to(&prod, out_shape, va.shape()));
            }
            if nodes[*b].needs_grad {
                let prod = kernels::broadcast_binary(g, out_shape, va.data(), va.shape(), out_shape, |x, y| x * y);
                acc(*b, kernels::sum_to(&prod, out_shape, vb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = kernels::broadcast_binary(g, out_shape, vb.data(), vb.shape(), out_shape, |x, y| x / y);
            if nodes[*b].needs_grad {
                let y = node.value.data();
                let gb: Vec<T> = ga.iter().zip(y).map(|(&q, &yv)| -q * yv).collect();
                acc(*b, kernels::sum_to(&gb, out_shape, vb.shape()));
            }
            acc(*a, kernels::sum_to(&ga, out_shape, va.shape()));
        }
        Op::Affine { x, scale } => acc(*x, g.iter().map(|&v| v * *scale).collect()),
        Op::MatMul { a, b } => {
            let (va, vb) = (val(*a), val(*b));
            let ash = va.shape();
            let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
            let n = *out_shape.last().expect("matmul output rank");
            let batches = va.numel() / (m * k);
            let shared_b = vb.rank() == 2 && ash.len() > 2;
            if nodes[*a].needs_grad {
                let mut ga = vec![T::zero(); va.numel()];
                for bi in 0..batches {
                    let bsl = if shared_b { vb.data() } else { &vb.data()[bi * k * n..][..k * n] };
                    kernels::gemm_nt(m, n, k, &g[bi * m * n..][..m * n], bsl, &mut ga[bi * m * k..][..m * k]);
                }
                acc(*a, ga);
            }
            if nodes[*b].needs_grad {
                let mut gb = vec![T::zero(); vb.numel()];
                let mut tmp = vec![T::zero(); k * n];
                for bi in 0..batches {
                    let asl = &va.data()[bi * m * k..][..m * k];
                    let gsl = &g[bi * m * n..][..m * n];
                    if shared_b {
                        kernels::gemm_tn(k, m, n, asl, gsl, &mut tmp);
                        gb.iter_mut().zip(&tmp).for_each(|(d, &s)| *d += s);
                    } else {
                        kernels::gemm_tn(k, m, n, asl, gsl, &mut gb[bi * k * n..][..k * n]);
                    }
                }
                acc(*b, gb);
            }
        }
        Op::Reshape(x) => acc(*x, g.to_vec()),
        Op::Permute { x, perm } => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            acc(*x, kernels::permute(g, out_shape, &inv));
        }
        Op::Narrow { x, axis, start } => {
            let in_shape = val(*x).shape();
            let (outer, full, inner) = kernels::axis_split(in_shape, *axis);
            let len = out_shape[*axis];
            let mut gx = vec![T::zero(); val(*x).numel()];
            for o in 0..outer {
                let dst = &mut gx[(o * full + start) * inner..][..len * inner];
                dst.copy_from_slice(&g[o * len * inner..][..len * inner]);
            }
            acc(*x, gx);
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
            let mut offset = 0;
            for &input in inputs {
                let len = val(input).shape()[*axis];
                if nodes[input].needs_grad {
                    let mut gi = Vec::with_capacity(val(input).numel());
                    for o in 0..outer {
                        gi.extend_from_slice(&g[(o * total + offset) * inner..][..len * inner]);
                    }
                    acc(input, gi);
                }
                offset += len;
            }
        }
        Op::SumTo(x) => {
            let in_shape = val(*x).shape();
            let strides = kernels::broadcast_strides(out_shape, in_shape);
            let unit = vec![0; in_shape.len()];
            let mut gx = vec![T::zero(); val(*x).numel()];
            kernels::for_each_broadcast(in_shape, &strides, &unit, |o, is, _| gx[o] = g[is]);
            acc(*x, gx);
        }
        Op::Gelu(x) => {
            let gx = g.iter().zip(val(*x).data()).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect();
            acc(*x, gx);
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            acc(*x, g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect());
        }
        Op::Relu(x) => {
            let xs = val(*x).data();
            let gx = g.iter().zip(xs).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() });
            acc(*x, gx.collect());
        }
        Op::Exp(x) => {
            let y = node.value.data();
            acc(*x, g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect());
        }
        Op::Ln(x) => {
            let xs = val(*x).data();
            acc(*x, g.iter().zip(xs).map(|(&gv, &xv)| gv / xv).collect());
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = kernels::axis_split(out_shape, *axis);
            let y = node.value.data();
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: T = (0..len).map(|a| g[base + a * inner] * y[base + a * inner]).sum();
                    for a in 0..len {
                        let idx = base + a * inner;
                        gx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            acc(*x, gx);
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, len, inner) = kernels::axis_split(out_shape, *axis);
            let y = node.value.data();
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let total: T = (0..len).map(|a| g[base + a * inner]).sum();
                    for a in 0..len {
                        let idx = base + a * inner;
                        gx[idx] = g[idx] - y[idx].exp() * total;
                    }
                }
            }
            acc(*x, gx);
        }
        Op::Standardize { x, group, rstd } => {
            acc(*x, kernels::standardize_backward(g, node.value.data(), rstd, *group));
        }
        Op::Conv2d { x, w, b, geom } => {
            if nodes[*x].needs_grad {
                acc(*x, kernels::conv2d_backward_input(geom, g, val(*w).data()));
            }
            if nodes[*w].needs_grad {
                acc(*w, kernels::conv2d_backward_weight(geom, g, val(*x).data()));
            }
            if let Some(b) = b {
                acc(*b, kernels::channel_sums(g, geom.batch, geom.out_ch, geom.oh * geom.ow));
            }
        }
        Op::ConvT2d { x, w, b, geom } => {
            if nodes[*x].needs_grad {
                acc(*x, kernels::conv_transpose2d_backward_input(geom, g, val(*w).data()));
            }
            if nodes[*w].needs_grad {
                acc(*w, kernels::conv_transpose2d_backward_weight(geom, g, val(*x).data()));
            }
            if let Some(b) = b {
                acc(*b, kernels::channel_sums(g, geom.batch, geom.out_ch, geom.oh * geom.ow));
            }
        }
        Op::AvgPool { x, k } => {
            let s = val(*x).shape();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            let planes = val(*x).numel() / (h * w);
            acc(*x, kernels::avg_pool_backward(g, planes, h, w, *k));
        }
        Op::MaxPool { x, argmax } => {
            let mut gx = vec![T::zero(); val(*x).numel()];
            for (&src, &gv) in argmax.iter().zip(g) {
                gx[src] += gv;
            }
            acc(*x, gx);
        }
        Op::Dropout { x, mask } => {
            acc(*x, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect());
        }
    }
}
