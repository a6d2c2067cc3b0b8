use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels::{self, Conv2dParams};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        p: Conv2dParams,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    ChannelMul(usize, usize),
    ChannelAdd(usize, usize),
    LayerNorm {
        x: usize,
        rstd: Vec<f64>,
    },
    Gelu(usize),
    LeakyRelu(usize, f64),
    Softmax(usize),
    LogSoftmax(usize),
    Exp(usize),
    Bmm {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Reshape(usize),
    DivByScalar(usize, usize),
    PixelShuffle(usize, usize),
    PixelUnshuffle(usize, usize),
    Concat(Vec<usize>),
    MeanSpatial(usize),
    MeanAbs(usize),
    MeanSquare(usize),
    Sum(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph for one forward pass.
///
/// Nodes are appended in evaluation order, so a reverse sweep over the node
/// list is a valid topological order for backpropagation.
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

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant during backpropagation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Reverse sweep from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root belongs to a different tape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));

        let acc = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let val = |id: usize| -> &Tensor { &nodes[id].value };
        let rg = |id: usize| nodes[id].requires_grad;

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x * y));
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, g.zip_map(val(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Conv2d { x, w, b, p } => {
                    let need = [rg(*x), rg(*w), b.is_some_and(rg)];
                    let (dx, dw, db) = kernels::conv2d_backward(val(*x), val(*w), &g, *p, need);
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, db) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let need = [rg(*x), rg(*w), b.is_some_and(rg)];
                    let (dx, dw, db) = kernels::linear_backward(val(*x), val(*w), &g, need);
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, db) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::ChannelMul(x, s) => {
                    let (xv, sv) = (val(*x), val(*s));
                    let (n, c) = (xv.dim(0), xv.dim(1));
                    let sp = xv.len() / (n * c);
                    if rg(*x) {
                        let mut dx = g.clone();
                        for (i, chunk) in dx.data_mut().chunks_mut(sp).enumerate() {
                            let f = sv.data()[i];
                            chunk.iter_mut().for_each(|v| *v *= f);
                        }
                        acc(&mut grads, *x, dx);
                    }
                    if rg(*s) {
                        let ds: Vec<f64> = g
                            .data()
                            .chunks(sp)
                            .zip(xv.data().chunks(sp))
                            .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                            .collect();
                        acc(&mut grads, *s, Tensor::new(sv.shape(), ds));
                    }
                }
                Op::ChannelAdd(x, t) => {
                    let tv = val(*t);
                    let sp = g.len() / tv.len();
                    if rg(*t) {
                        let dt: Vec<f64> = g.data().chunks(sp).map(|c| c.iter().sum()).collect();
                        acc(&mut grads, *t, Tensor::new(tv.shape(), dt));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::LayerNorm { x, rstd } => {
                    let dx = kernels::layer_norm_channels_backward(&node.value, rstd, &g);
                    acc(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let dx = g.zip_map(val(*x), |gv, xv| gv * kernels::gelu_grad(xv));
                    acc(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let s = *slope;
                    let dx = g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { gv * s });
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax(x) => {
                    acc(&mut grads, *x, kernels::softmax_last_backward(&node.value, &g));
                }
                Op::LogSoftmax(x) => {
                    acc(&mut grads, *x, kernels::log_softmax_last_backward(&node.value, &g));
                }
                Op::Exp(x) => {
                    acc(&mut grads, *x, g.zip_map(&node.value, |a, b| a * b));
                }
                Op::Bmm { a, b, trans_b } => {
                    let (da, db) =
                        kernels::bmm_backward(val(*a), val(*b), &g, *trans_b, [rg(*a), rg(*b)]);
                    if let Some(da) = da {
                        acc(&mut grads, *a, da);
                    }
                    if let Some(db) = db {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    acc(&mut grads, *x, g.reshape(&shape));
                }
                Op::DivByScalar(x, s) => {
                    let sv = val(*s).item();
                    if rg(*s) {
                        let ds: f64 = g
                            .data()
                            .iter()
                            .zip(val(*x).data())
                            .map(|(gv, xv)| gv * xv)
                            .sum::<f64>()
                            * (-1.0 / (sv * sv));
                        acc(&mut grads, *s, Tensor::new(val(*s).shape(), vec![ds]));
                    }
                    acc(&mut grads, *x, g.map(|v| v / sv));
                }
                Op::PixelShuffle(x, r) => {
                    acc(&mut grads, *x, kernels::pixel_unshuffle(&g, *r));
                }
                Op::PixelUnshuffle(x, r) => {
                    acc(&mut grads, *x, kernels::pixel_shuffle(&g, *r));
                }
                Op::Concat(parts) => {
                    let n = g.dim(0);
                    let inner_total = g.len() / n;
                    let mut offset = 0;
                    for &pid in parts {
                        let pv = val(pid);
                        let inner = pv.len() / n;
                        if rg(pid) {
                            let mut d = Vec::with_capacity(pv.len());
                            for bi in 0..n {
                                let start = bi * inner_total + offset;
                                d.extend_from_slice(&g.data()[start..start + inner]);
                            }
                            acc(&mut grads, pid, Tensor::new(pv.shape(), d));
                        }
                        offset += inner;
                    }
                }
                Op::MeanSpatial(x) => {
                    let xv = val(*x);
                    let sp = xv.len() / g.len();
                    let mut d = Vec::with_capacity(xv.len());
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv / sp as f64, sp));
                    }
                    acc(&mut grads, *x, Tensor::new(xv.shape(), d));
                }
                Op::MeanAbs(x) => {
                    let xv = val(*x);
                    let s = g.item() / xv.len() as f64;
                    // subgradient of |v| at 0 is taken as 0
                    acc(&mut grads, *x, xv.map(|v| if v > 0.0 { s } else if v < 0.0 { -s } else { 0.0 }));
                }
                Op::MeanSquare(x) => {
                    let xv = val(*x);
                    let s = 2.0 * g.item() / xv.len() as f64;
                    acc(&mut grads, *x, xv.map(|v| v * s));
                }
                Op::Sum(x) => {
                    let xv = val(*x);
                    acc(&mut grads, *x, Tensor::full(xv.shape(), g.item()));
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`]: gradients of the root per recorded leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` is a tracked leaf
    /// reachable from the root.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn same_tape(&self, other: Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        self.same_tape(other);
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    /// Cuts the graph: same value, no gradient flows back through it.
    pub fn detach(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|a| a * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|a| a + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn conv2d(self, w: Var<'t>, b: Option<Var<'t>>, p: Conv2dParams) -> Var<'t> {
        self.same_tape(w);
        let bv = b.map(|b| b.value());
        let v = kernels::conv2d(&self.value(), &w.value(), bv.as_deref(), p);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.tape.push(
            v,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                p,
            },
            rg,
        )
    }

    pub fn linear(self, w: Var<'t>, b: Option<Var<'t>>) -> Var<'t> {
        self.same_tape(w);
        let bv = b.map(|b| b.value());
        let v = kernels::linear(&self.value(), &w.value(), bv.as_deref());
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.tape.push(
            v,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            rg,
        )
    }

    /// `x[n, c, ...] * s[n, c]`, broadcast over trailing axes.
    pub fn channel_mul(self, s: Var<'t>) -> Var<'t> {
        let xv = self.value();
        let sv = s.value();
        assert_eq!(&xv.shape()[..2], sv.shape(), "channel_mul: scale shape mismatch");
        let sp = xv.len() / sv.len();
        let mut out = (*xv).clone();
        for (i, chunk) in out.data_mut().chunks_mut(sp).enumerate() {
            let f = sv.data()[i];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        self.binary(s, out, Op::ChannelMul(self.id, s.id))
    }

    /// `x[n, c, ...] + t[n, c]`, broadcast over trailing axes.
    pub fn channel_add(self, t: Var<'t>) -> Var<'t> {
        let xv = self.value();
        let tv = t.value();
        assert_eq!(&xv.shape()[..2], tv.shape(), "channel_add: shift shape mismatch");
        let sp = xv.len() / tv.len();
        let mut out = (*xv).clone();
        for (i, chunk) in out.data_mut().chunks_mut(sp).enumerate() {
            let f = tv.data()[i];
            chunk.iter_mut().for_each(|v| *v += f);
        }
        self.binary(t, out, Op::ChannelAdd(self.id, t.id))
    }

    /// Layer normalization over axis 1 at every other index, no affine.
    pub fn layer_norm_channels(self) -> Var<'t> {
        let (v, rstd) = kernels::layer_norm_channels(&self.value(), LN_EPS);
        self.unary(v, Op::LayerNorm { x: self.id, rstd })
    }

    pub fn gelu(self) -> Var<'t> {
        let v = self.value().map(kernels::gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|a| if a > 0.0 { a } else { a * slope });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn softmax(self) -> Var<'t> {
        let v = kernels::softmax_last(&self.value());
        self.unary(v, Op::Softmax(self.id))
    }

    pub fn log_softmax(self) -> Var<'t> {
        let v = kernels::log_softmax_last(&self.value());
        self.unary(v, Op::LogSoftmax(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn bmm(self, other: Var<'t>, trans_b: bool) -> Var<'t> {
        let v = kernels::bmm(&self.value(), &other.value(), trans_b);
        self.binary(
            other,
            v,
            Op::Bmm {
                a: self.id,
                b: other.id,
                trans_b,
            },
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshape(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// Divides every element by the single value held in `s`.
    pub fn div_by_scalar(self, s: Var<'t>) -> Var<'t> {
        let sv = s.item();
        let v = self.value().map(|a| a / sv);
        self.binary(s, v, Op::DivByScalar(self.id, s.id))
    }

    pub fn pixel_shuffle(self, r: usize) -> Var<'t> {
        let v = kernels::pixel_shuffle(&self.value(), r);
        self.unary(v, Op::PixelShuffle(self.id, r))
    }

    pub fn pixel_unshuffle(self, r: usize) -> Var<'t> {
        let v = kernels::pixel_unshuffle(&self.value(), r);
        self.unary(v, Op::PixelUnshuffle(self.id, r))
    }

    /// Concatenates along axis 1. All parts share axis 0 and trailing axes.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let n = values[0].dim(0);
        let tail = values[0].shape()[2..].to_vec();
        let mut channels = 0;
        for v in &values {
            assert_eq!(v.dim(0), n, "concat: leading axis mismatch");
            assert_eq!(&v.shape()[2..], &tail[..], "concat: trailing axes mismatch");
            channels += v.dim(1);
        }
        let mut data = Vec::with_capacity(values.iter().map(|v| v.len()).sum());
        for bi in 0..n {
            for v in &values {
                let inner = v.len() / n;
                data.extend_from_slice(&v.data()[bi * inner..(bi + 1) * inner]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|p| {
            assert!(std::ptr::eq(p.tape, tape), "vars from different tapes");
            p.requires_grad()
        });
        tape.push(
            Tensor::new(&shape, data),
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            rg,
        )
    }

    /// `[n, c, ...] -> [n, c]` by averaging the trailing axes.
    pub fn mean_spatial(self) -> Var<'t> {
        let xv = self.value();
        let (n, c) = (xv.dim(0), xv.dim(1));
        let sp = xv.len() / (n * c);
        let data = xv
            .data()
            .chunks(sp)
            .map(|ch| ch.iter().sum::<f64>() / sp as f64)
            .collect();
        self.unary(Tensor::new(&[n, c], data), Op::MeanSpatial(self.id))
    }

    pub fn mean_abs(self) -> Var<'t> {
        let xv = self.value();
        let m = xv.data().iter().map(|v| v.abs()).sum::<f64>() / xv.len() as f64;
        self.unary(Tensor::scalar(m), Op::MeanAbs(self.id))
    }

    pub fn mean_square(self) -> Var<'t> {
        let m = self.value().sq_norm() / self.value().len() as f64;
        self.unary(Tensor::scalar(m), Op::MeanSquare(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }
}
