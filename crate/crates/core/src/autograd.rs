//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] replays the records in reverse and returns
//! a [`Gradients`] map. Tapes are single-use: build one per forward pass.
//!
//! `Var` methods panic on shape mismatches and domain errors; those are
//! contract violations in model code. The eager [`Tensor`] API reports the
//! same conditions as `Err`.

use std::cell::RefCell;
use std::fmt;
use std::ops;
use std::sync::Arc;

use crate::error::{HclError, Result};
use crate::params::{ParamId, ParamStore};
use crate::spectral::fft;
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Maximum(usize, usize),
    Minimum(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Abs(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    Powf(usize, f64),
    Scale(usize, f64),
    AddScalar(usize),
    Clamp(usize, f64, f64),
    Softmax(usize, usize),
    MatMul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
    },
    Upsample(usize, usize),
    AvgPool(usize, usize),
    MaxPool(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Dft2(usize),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter. Parameters with `requires_grad == false` are
    /// recorded as constants.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: p.shared_value(),
            op: Op::Param(id),
            needs_grad: p.requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(HclError::contract("loss belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(HclError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut params = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Param(pid) => {
                    params.push((*pid, id));
                    grads[id] = Some(g);
                }
                op => backprop(&nodes, id, op, &g, &mut grads),
            }
        }
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Elementwise `f(g, a, b)` over the broadcast output shape.
fn bcast_map(
    out_shape: &[usize],
    g: &[f64],
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Vec<f64> {
    if a.shape() == out_shape && b.shape() == out_shape {
        return g
            .iter()
            .zip(a.data())
            .zip(b.data())
            .map(|((&g, &x), &y)| f(g, x, y))
            .collect();
    }
    let sa = kernels::broadcast_strides(a.shape(), out_shape);
    let sb = kernels::broadcast_strides(b.shape(), out_shape);
    let mut out = vec![0.0; g.len()];
    kernels::for_each_broadcast(out_shape, &sa, &sb, |i, ia, ib| {
        out[i] = f(g[i], a.data()[ia], b.data()[ib]);
    });
    out
}

fn unary_grad(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

fn backprop(nodes: &[Node], id: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let need = |i: usize| nodes[i].needs_grad;
    match *op {
        Op::Leaf | Op::Param(_) => unreachable!(),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if need(a) {
                accumulate(grads, nodes, a, kernels::reduce_to_shape(g, out.shape(), val(a).shape()));
            }
            if need(b) {
                let mut gb = kernels::reduce_to_shape(g, out.shape(), val(b).shape());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if need(a) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, _, y| g * y);
                accumulate(grads, nodes, a, kernels::reduce_to_shape(&full, out.shape(), ta.shape()));
            }
            if need(b) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, x, _| g * x);
                accumulate(grads, nodes, b, kernels::reduce_to_shape(&full, out.shape(), tb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if need(a) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, _, y| g / y);
                accumulate(grads, nodes, a, kernels::reduce_to_shape(&full, out.shape(), ta.shape()));
            }
            if need(b) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, x, y| -g * x / (y * y));
                accumulate(grads, nodes, b, kernels::reduce_to_shape(&full, out.shape(), tb.shape()));
            }
        }
        Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let is_max = matches!(op, Op::Maximum(..));
            let (ta, tb) = (val(a), val(b));
            let a_wins = move |x: f64, y: f64| if is_max { x >= y } else { x <= y };
            if need(a) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, x, y| if a_wins(x, y) { g } else { 0.0 });
                accumulate(grads, nodes, a, kernels::reduce_to_shape(&full, out.shape(), ta.shape()));
            }
            if need(b) {
                let full = bcast_map(out.shape(), g, ta, tb, |g, x, y| if a_wins(x, y) { 0.0 } else { g });
                accumulate(grads, nodes, b, kernels::reduce_to_shape(&full, out.shape(), tb.shape()));
            }
        }
        Op::Neg(a) => accumulate(grads, nodes, a, g.iter().map(|v| -v).collect()),
        Op::Exp(a) => accumulate(grads, nodes, a, unary_grad(g, out.data(), |g, y| g * y)),
        Op::Log(a) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| g / x)),
        Op::Sqrt(a) => accumulate(grads, nodes, a, unary_grad(g, out.data(), |g, y| g / (2.0 * y))),
        Op::Square(a) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| 2.0 * x * g)),
        Op::Abs(a) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        })),
        Op::Sigmoid(a) => accumulate(grads, nodes, a, unary_grad(g, out.data(), |g, y| g * y * (1.0 - y))),
        Op::Softplus(a) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| g * tensor::sigmoid(x))),
        Op::Relu(a) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| if x > 0.0 { g } else { 0.0 })),
        Op::Powf(a, p) => accumulate(grads, nodes, a, unary_grad(g, val(a).data(), |g, x| g * p * x.powf(p - 1.0))),
        Op::Scale(a, c) => accumulate(grads, nodes, a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) => accumulate(grads, nodes, a, g.to_vec()),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            nodes,
            a,
            unary_grad(g, val(a).data(), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
        ),
        Op::Softmax(a, axis) => {
            let (outer, len, inner) = kernels::axis_split(out.shape(), axis);
            let y = out.data();
            let mut ga = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..len {
                        ga[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (batch, m, k, n) = tensor::matmul_dims(ta.shape(), tb.shape()).expect("checked in forward");
            let mut ga = Vec::with_capacity(batch * m * k);
            let mut gb = Vec::with_capacity(batch * k * n);
            for bi in 0..batch {
                let gs = &g[bi * m * n..(bi + 1) * m * n];
                let asl = &ta.data()[bi * m * k..(bi + 1) * m * k];
                let bsl = &tb.data()[bi * k * n..(bi + 1) * k * n];
                if need(a) {
                    ga.extend(kernels::gemm_nt(gs, bsl, m, n, k));
                }
                if need(b) {
                    gb.extend(kernels::gemm_tn(asl, gs, k, m, n));
                }
            }
            if need(a) {
                accumulate(grads, nodes, a, ga);
            }
            if need(b) {
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Conv2d { x, w, b, geom } => {
            let out_c = val(w).shape()[0];
            let hw = geom.out_h() * geom.out_w();
            let ck = geom.patch_len();
            if need(w) {
                let cols = kernels::im2col(val(x).data(), &geom);
                accumulate(grads, nodes, w, kernels::gemm_nt(g, &cols, out_c, hw, ck));
            }
            if need(x) {
                let gcols = kernels::gemm_tn(val(w).data(), g, ck, out_c, hw);
                accumulate(grads, nodes, x, kernels::col2im(&gcols, &geom));
            }
            if let Some(b) = b {
                if need(b) {
                    let gb = g.chunks(hw).map(|c| c.iter().sum()).collect();
                    accumulate(grads, nodes, b, gb);
                }
            }
        }
        Op::Upsample(a, f) => {
            let s = val(a).shape().to_vec();
            let (c, h, w) = (s[0], s[1], s[2]);
            let wo = w * f;
            let mut ga = vec![0.0; c * h * w];
            for ci in 0..c {
                for i in 0..h * f {
                    for j in 0..wo {
                        ga[(ci * h + i / f) * w + j / f] += g[(ci * h * f + i) * wo + j];
                    }
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::AvgPool(a, k) => {
            let s = val(a).shape().to_vec();
            let (c, h, w) = (s[0], s[1], s[2]);
            let (ho, wo) = (h / k, w / k);
            let inv = 1.0 / (k * k) as f64;
            let mut ga = vec![0.0; c * h * w];
            for ci in 0..c {
                for i in 0..ho * k {
                    for j in 0..wo * k {
                        ga[(ci * h + i) * w + j] = g[(ci * ho + i / k) * wo + j / k] * inv;
                    }
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::MaxPool(a, ref argmax) => {
            let mut ga = vec![0.0; val(a).numel()];
            for (gi, &src) in g.iter().zip(argmax) {
                ga[src] += gi;
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::Sum(a) => accumulate(grads, nodes, a, vec![g[0]; val(a).numel()]),
        Op::Mean(a) => {
            let n = val(a).numel();
            accumulate(grads, nodes, a, vec![g[0] / n as f64; n]);
        }
        Op::SumAxis(a, axis) => {
            let (outer, len, inner) = kernels::axis_split(val(a).shape(), axis);
            let mut ga = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    ga[(o * len + k) * inner..(o * len + k + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::Concat(ref parts, axis) => {
            let (outer, _, inner) = kernels::axis_split(out.shape(), axis);
            let total = out.shape()[axis];
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[axis];
                if need(p) {
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[start..start + len * inner]);
                    }
                    accumulate(grads, nodes, p, gp);
                }
                offset += len;
            }
        }
        Op::Slice(a, axis, start) => {
            let (outer, total, inner) = kernels::axis_split(val(a).shape(), axis);
            let len = out.shape()[axis];
            let mut ga = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::Reshape(a) => accumulate(grads, nodes, a, g.to_vec()),
        Op::Permute(a, ref axes) => {
            let (ga, _) = kernels::permute(g, out.shape(), &kernels::invert_axes(axes));
            accumulate(grads, nodes, a, ga);
        }
        Op::Dft2(a) => {
            // x ↦ (Re F, Im F) has adjoint (gR, gI) ↦ Re(Σ (gR + i·gI) e^{+iθ}),
            // the unnormalized inverse transform.
            let s = val(a).shape().to_vec();
            let (c, h, w) = (s[0], s[1], s[2]);
            let plane = h * w;
            let mut ga = vec![0.0; c * plane];
            for ci in 0..c {
                let mut re = g[ci * plane..(ci + 1) * plane].to_vec();
                let mut im = g[(c + ci) * plane..(c + ci + 1) * plane].to_vec();
                fft::fft2_inplace(&mut re, &mut im, h, w, true);
                ga[ci * plane..(ci + 1) * plane].copy_from_slice(&re);
            }
            accumulate(grads, nodes, a, ga);
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it was reached.
    pub fn wrt(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(var.id)?.as_ref()?;
        Some(Tensor::from_parts(var.shape(), g.clone()))
    }

    /// `(parameter, gradient)` pairs, one per recorded use of a parameter.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(pid, node)| self.grads[node].as_deref().map(|g| (pid, g)))
    }
}

fn bin_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Vec<usize> {
    kernels::broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!("{}", HclError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    })
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn needs(&self) -> bool {
        self.tape.needs(self.id)
    }

    /// A constant copy of this value that blocks gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op, self.needs())
    }

    fn binary(&self, other: Var<'t>, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        bin_shape(&a, &b, name);
        let v = a.zip_with(&b, f).expect("shape checked");
        self.tape.push(v, op, self.needs() || other.needs())
    }

    pub fn add(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Add(self.id, o.id), "add", |a, b| a + b)
    }

    pub fn sub(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Sub(self.id, o.id), "sub", |a, b| a - b)
    }

    pub fn mul(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Mul(self.id, o.id), "mul", |a, b| a * b)
    }

    pub fn div(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Div(self.id, o.id), "div", |a, b| a / b)
    }

    pub fn maximum(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Maximum(self.id, o.id), "maximum", |a, b| if a >= b { a } else { b })
    }

    pub fn minimum(&self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Op::Minimum(self.id, o.id), "minimum", |a, b| if a <= b { a } else { b })
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    /// Natural log. Panics with a domain error on negative input.
    pub fn log(&self) -> Var<'t> {
        let v = self.value().log().unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Log(self.id), self.needs())
    }

    /// Square root. Panics with a domain error on negative input.
    pub fn sqrt(&self) -> Var<'t> {
        let v = self.value().sqrt().unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Sqrt(self.id), self.needs())
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), tensor::sigmoid)
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), tensor::softplus)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// `x^p` for a constant exponent; inputs must be non-negative unless `p`
    /// is integral.
    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn softmax(&self, axis: usize) -> Var<'t> {
        let v = self.value().softmax(axis).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Softmax(self.id, axis), self.needs())
    }

    pub fn matmul(&self, o: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&o.value()).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::MatMul(self.id, o.id), self.needs() || o.needs())
    }

    pub fn conv2d(&self, w: Var<'t>, b: Option<Var<'t>>, stride: usize, padding: usize) -> Var<'t> {
        let (x, wt) = (self.value(), w.value());
        let geom = tensor::conv_geometry(x.shape(), wt.shape(), stride, padding).unwrap_or_else(|e| panic!("{e}"));
        let bv = b.map(|b| b.value());
        let v = x
            .conv2d(&wt, bv.as_deref(), stride, padding)
            .unwrap_or_else(|e| panic!("{e}"));
        let needs = self.needs() || w.needs() || b.is_some_and(|b| b.needs());
        self.tape.push(
            v,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            needs,
        )
    }

    /// Nearest-neighbour upsampling of a `C×H×W` value by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Var<'t> {
        let x = self.value();
        let [c, h, w] = chw(x.shape(), "upsample_nearest");
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    out[(ci * ho + i) * wo + j] = x.data()[(ci * h + i / factor) * w + j / factor];
                }
            }
        }
        self.tape.push(
            Tensor::from_parts(vec![c, ho, wo], out),
            Op::Upsample(self.id, factor),
            self.needs(),
        )
    }

    /// Non-overlapping `k×k` average pooling; trailing rows/cols are dropped.
    pub fn avg_pool2d(&self, k: usize) -> Var<'t> {
        let x = self.value();
        let [c, h, w] = chw(x.shape(), "avg_pool2d");
        let (ho, wo) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            for i in 0..ho * k {
                for j in 0..wo * k {
                    out[(ci * ho + i / k) * wo + j / k] += x.data()[(ci * h + i) * w + j] * inv;
                }
            }
        }
        self.tape.push(
            Tensor::from_parts(vec![c, ho, wo], out),
            Op::AvgPool(self.id, k),
            self.needs(),
        )
    }

    pub fn max_pool2d(&self, k: usize) -> Var<'t> {
        let x = self.value();
        let [c, h, w] = chw(x.shape(), "max_pool2d");
        let (ho, wo) = (h / k, w / k);
        let mut out = vec![f64::NEG_INFINITY; c * ho * wo];
        let mut arg = vec![0usize; c * ho * wo];
        for ci in 0..c {
            for i in 0..ho * k {
                for j in 0..wo * k {
                    let src = (ci * h + i) * w + j;
                    let dst = (ci * ho + i / k) * wo + j / k;
                    if x.data()[src] > out[dst] {
                        out[dst] = x.data()[src];
                        arg[dst] = src;
                    }
                }
            }
        }
        self.tape.push(
            Tensor::from_parts(vec![c, ho, wo], out),
            Op::MaxPool(self.id, arg),
            self.needs(),
        )
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.push(v, Op::Sum(self.id), self.needs())
    }

    pub fn mean(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().mean());
        self.tape.push(v, Op::Mean(self.id), self.needs())
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Var<'t> {
        let v = self.value().sum_axis(axis, keepdim).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::SumAxis(self.id, axis), self.needs())
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Var<'t> {
        let len = self.shape()[axis] as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / len)
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        let tape = parts.first().expect("concat of zero vars").tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values[0].shape().to_vec();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                panic!("{}", HclError::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let needs = parts.iter().any(|p| p.needs());
        tape.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
            needs,
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let s = x.shape();
        if axis >= s.len() || start > end || end > s[axis] {
            panic!("{}", HclError::shape("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, total, inner) = kernels::axis_split(s, axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * total + start) * inner;
            data.extend_from_slice(&x.data()[from..from + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Slice(self.id, axis, start),
            self.needs(),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = self.value().reshape(shape.to_vec()).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Reshape(self.id), self.needs())
    }

    pub fn permute(&self, axes: &[usize]) -> Var<'t> {
        let v = self.value().permute(axes).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Permute(self.id, axes.to_vec()), self.needs())
    }

    /// Transpose of a 2-D value.
    pub fn t(&self) -> Var<'t> {
        assert_eq!(self.shape().len(), 2, "t() needs a 2-D value");
        self.permute(&[1, 0])
    }

    /// Per-channel 2-D DFT of a real `C×H×W` value, returned as
    /// `[2, C, H, W]` with real parts first.
    pub fn dft2(&self) -> Var<'t> {
        let x = self.value();
        let [c, h, w] = chw(x.shape(), "dft2");
        let plane = h * w;
        let mut data = vec![0.0; 2 * c * plane];
        for ci in 0..c {
            let mut re = x.data()[ci * plane..(ci + 1) * plane].to_vec();
            let mut im = vec![0.0; plane];
            fft::fft2_inplace(&mut re, &mut im, h, w, false);
            data[ci * plane..(ci + 1) * plane].copy_from_slice(&re);
            data[(c + ci) * plane..(c + ci + 1) * plane].copy_from_slice(&im);
        }
        self.tape.push(
            Tensor::from_parts(vec![2, c, h, w], data),
            Op::Dft2(self.id),
            self.needs(),
        )
    }

    /// Multiplies by a constant tensor (broadcast).
    pub fn mul_const(&self, t: Tensor) -> Var<'t> {
        self.mul(self.tape.constant(t))
    }

    pub fn add_const(&self, t: Tensor) -> Var<'t> {
        self.add(self.tape.constant(t))
    }
}

fn chw(shape: &[usize], op: &'static str) -> [usize; 3] {
    match shape {
        [c, h, w] => [*c, *h, *w],
        _ => panic!("{}", HclError::shape(op, format!("expected C×H×W, got {shape:?}"))),
    }
}

macro_rules! var_binop {
    ($tr:ident, $m:ident) => {
        impl<'t> ops::$tr for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, rhs: Var<'t>) -> Var<'t> {
                Var::$m(&self, rhs)
            }
        }
    };
}

var_binop!(Add, add);
var_binop!(Sub, sub);
var_binop!(Mul, mul);
var_binop!(Div, div);

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let g = tape.backward(x.square()).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([4]));
        let y = x.sigmoid();
        assert!(y.value().data().iter().all(|&v| v == 0.5));
        let g = tape.backward(y.sum()).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x.exp()), Err(HclError::Contract(_))));
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn var_shape_mismatch_panics() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros([2, 3]));
        let b = tape.leaf(Tensor::zeros([4]));
        let _ = a + b;
    }

    #[test]
    #[should_panic(expected = "domain error")]
    fn var_log_of_negative_panics() {
        let tape = Tape::new();
        tape.leaf(Tensor::full([1], -1.0)).log();
    }

    #[test]
    fn broadcast_gradient_reduces_to_operand_shape() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones([2, 3]));
        let b = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let g = tape.backward((a * b).sum()).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = x * x + x;
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 5.0);
    }
}
