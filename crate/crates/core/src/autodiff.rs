//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. A forward pass
//! builds a fresh tape; [`Tape::backward`] then walks it once in reverse and
//! returns the [`Gradients`] of a scalar loss with respect to every leaf that
//! requires them. A tape can be differentiated only once.
//!
//! ```
//! use rco::autodiff::Tape;
//! use rco::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(y.item(), 9.0);
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Padding, Tensor};

type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    Reshape(NodeId),
    SwapAxes(NodeId, usize, usize),
    MatMul(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Slice { src: NodeId, start: usize },
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
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

    /// A leaf whose gradient is tracked.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records a node whose parents are `parents`; it requires a gradient if
    /// any parent does.
    fn record(&self, value: Tensor, op: Op, parents: &[NodeId]) -> Var<'_> {
        let requires = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(value, op, requires)
    }

    /// Back-propagates from a scalar `loss`. Each tape may be differentiated
    /// once; a second call fails rather than double-accumulating.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let val = |i: NodeId| &nodes[i].value;
            let req = |i: NodeId| nodes[i].requires_grad;
            let mut acc = |i: NodeId, t: Tensor| {
                if req(i) {
                    accumulate(&mut grads, i, t);
                }
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if req(b) {
                        acc(b, g.clone());
                    }
                    acc(a, g);
                }
                Op::Sub(a, b) => {
                    if req(b) {
                        acc(b, g.scale(-1.0));
                    }
                    acc(a, g);
                }
                Op::Mul(a, b) => {
                    if req(a) {
                        acc(a, g.mul(val(b))?);
                    }
                    if req(b) {
                        acc(b, g.mul(val(a))?);
                    }
                }
                Op::Scale(a, c) => acc(a, g.scale(c)),
                Op::AddScalar(a) => acc(a, g),
                Op::Exp(a) => acc(a, g.mul(&node.value)?),
                Op::Relu(a) => acc(a, g.zip_with(val(a), |g, x| if x > 0.0 { g } else { 0.0 })?),
                Op::Sigmoid(a) => acc(a, g.zip_with(&node.value, |g, s| g * s * (1.0 - s))?),
                Op::Tanh(a) => acc(a, g.zip_with(&node.value, |g, t| g * (1.0 - t * t))?),
                Op::Square(a) => acc(a, g.zip_with(val(a), |g, x| 2.0 * g * x)?),
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    acc(a, Tensor::full(val(a).shape(), gv));
                }
                Op::SumAxis(a, axis) => acc(a, g.broadcast_axis(val(a).shape(), axis)),
                Op::Reshape(a) => acc(a, g.reshape(val(a).shape())?),
                Op::SwapAxes(a, i, j) => acc(a, g.swap_axes(i, j)?),
                Op::MatMul(a, b) => {
                    if req(a) {
                        acc(a, g.matmul_nt(val(b))?);
                    }
                    if req(b) {
                        acc(b, val(a).matmul_tn(&g)?);
                    }
                }
                Op::SoftmaxRows(a) => {
                    // dW_ij = P_ij (g_ij - Σ_u P_iu g_iu)
                    let p = &node.value;
                    let (_, cols) = p.as_matrix()?;
                    let mut out = Vec::with_capacity(p.len());
                    for (prow, grow) in p.data().chunks(cols).zip(g.data().chunks(cols)) {
                        let dot: f64 = prow.iter().zip(grow).map(|(p, g)| p * g).sum();
                        out.extend(prow.iter().zip(grow).map(|(p, g)| p * (g - dot)));
                    }
                    acc(a, Tensor::from_parts(p.shape().to_vec(), out));
                }
                Op::Slice { src, start } => {
                    let mut full = Tensor::zeros(val(src).shape());
                    full.data_mut()[start..start + g.len()].copy_from_slice(g.data());
                    acc(src, full);
                }
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    geometry,
                } => {
                    let (gx, gk, gb) =
                        tensor::conv2d_backward(val(x), val(kernel), &g, &geometry, req(x));
                    if let Some(gx) = gx {
                        acc(x, gx);
                    }
                    acc(kernel, gk);
                    acc(bias, gb);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches node shape"),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a loss with respect to the leaves of a consumed tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `leaf`; zeros when the loss does not depend
    /// on it.
    pub fn wrt(&self, leaf: Var<'_>) -> Tensor {
        match self.grads.get(leaf.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&leaf.shape()),
        }
    }

    /// Like [`Gradients::wrt`] but moves the tensor out.
    pub fn take(&mut self, leaf: Var<'_>) -> Tensor {
        match self.grads.get_mut(leaf.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&leaf.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Value of a single-element var.
    ///
    /// Panics if the var holds more than one element.
    pub fn item(&self) -> f64 {
        self.value().item().expect("item() on a non-scalar var")
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("vars live on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let out = f(&self.value());
        self.tape.record(out, op, &[self.id])
    }

    fn binary(
        &self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = f(&self.value(), &other.value())?;
        Ok(self.tape.record(out, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), Tensor::add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), Tensor::sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), Tensor::mul)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), Tensor::matmul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x.scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x.map(|v| v + c))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), Tensor::exp)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), Tensor::relu)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| x.map(sigmoid))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |x| x.map(f64::tanh))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x.map(|v| v * v))
    }

    /// Sum of all elements, as shape `[1]`.
    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| Tensor::scalar(x.sum()))
    }

    /// Mean of all elements, as shape `[1]`.
    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let out = self.value().sum_axis(axis)?;
        Ok(self.tape.record(out, Op::SumAxis(self.id, axis), &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.record(out, Op::Reshape(self.id), &[self.id]))
    }

    pub fn swap_axes(&self, a: usize, b: usize) -> Result<Var<'t>> {
        let out = self.value().swap_axes(a, b)?;
        Ok(self.tape.record(out, Op::SwapAxes(self.id, a, b), &[self.id]))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let out = self.value().softmax_rows()?;
        Ok(self.tape.record(out, Op::SoftmaxRows(self.id), &[self.id]))
    }

    /// Contiguous run of `len` elements from the flattened value, starting at
    /// `start`, as a rank-1 var.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let v = self.value();
            if len == 0 || start + len > v.len() {
                return Err(Error::shape(format!(
                    "slice {start}..{} of {} elements",
                    start + len,
                    v.len()
                )));
            }
            Tensor::vector(v.data()[start..start + len].to_vec())
        };
        Ok(self.tape.record(
            out,
            Op::Slice {
                src: self.id,
                start,
            },
            &[self.id],
        ))
    }

    /// 2-D cross-correlation of `(ch, h, w)` input with `(out, ch, kh, kw)`
    /// kernels plus a per-output-channel bias.
    pub fn conv2d(&self, kernel: Var<'t>, bias: Var<'t>, padding: Padding) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let (out, geometry) = {
            let (x, k, b) = (self.value(), kernel.value(), bias.value());
            let geometry = ConvGeometry::new(&x, &k, &b, padding)?;
            (tensor::conv2d(&x, &k, &b, &geometry), geometry)
        };
        Ok(self.tape.record(
            out,
            Op::Conv2d {
                x: self.id,
                kernel: kernel.id,
                bias: bias.id,
                geometry,
            },
            &[self.id, kernel.id, bias.id],
        ))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
