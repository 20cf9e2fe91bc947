//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass as an
//! append-only list of nodes. Node ids are handed out in creation order, so
//! inputs always precede outputs and the backward sweep is a single reverse
//! pass over the list. A tape is meant to be built for one forward pass and
//! dropped afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds, used in diagnostics and for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    ScaleConst,
    Scale,
    DivScalar,
    Mask,
    MatVec,
    Tanh,
    Sigmoid,
    Softmax,
    Log,
    NegEntropy,
    L2Normalize,
    CoordinateMax,
    Dot,
    Sum,
    Pick,
    Stack,
    Abs,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::ScaleConst,
        OpKind::Scale,
        OpKind::DivScalar,
        OpKind::Mask,
        OpKind::MatVec,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::Log,
        OpKind::NegEntropy,
        OpKind::L2Normalize,
        OpKind::CoordinateMax,
        OpKind::Dot,
        OpKind::Sum,
        OpKind::Pick,
        OpKind::Stack,
        OpKind::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ScaleConst => "scale_const",
            OpKind::Scale => "scale",
            OpKind::DivScalar => "div_scalar",
            OpKind::Mask => "mask",
            OpKind::MatVec => "matvec",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::Log => "log",
            OpKind::NegEntropy => "neg_entropy",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::CoordinateMax => "coordinate_max",
            OpKind::Dot => "dot",
            OpKind::Sum => "sum",
            OpKind::Pick => "pick",
            OpKind::Stack => "stack",
            OpKind::Abs => "abs",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown primitive '{s}'")))
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf { param: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ScaleConst(NodeId, S),
    Scale(NodeId, NodeId),
    DivScalar(NodeId, NodeId),
    Mask(NodeId, Vec<S>),
    MatVec(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    NegEntropy(NodeId),
    L2Normalize(NodeId, S),
    /// Inputs and, per output coordinate, the index of the winning input.
    CoordinateMax(Vec<NodeId>, Vec<usize>),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Pick(NodeId, usize),
    Stack(Vec<NodeId>),
    Abs(NodeId),
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::ScaleConst(..) => OpKind::ScaleConst,
            Op::Scale(..) => OpKind::Scale,
            Op::DivScalar(..) => OpKind::DivScalar,
            Op::Mask(..) => OpKind::Mask,
            Op::MatVec(..) => OpKind::MatVec,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Log(_) => OpKind::Log,
            Op::NegEntropy(_) => OpKind::NegEntropy,
            Op::L2Normalize(..) => OpKind::L2Normalize,
            Op::CoordinateMax(..) => OpKind::CoordinateMax,
            Op::Dot(..) => OpKind::Dot,
            Op::Sum(_) => OpKind::Sum,
            Op::Pick(..) => OpKind::Pick,
            Op::Stack(_) => OpKind::Stack,
            Op::Abs(_) => OpKind::Abs,
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Gradients of a scalar output with respect to every parameter leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    by_node: BTreeMap<NodeId, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.by_node.get(&id)
    }

    /// Removes and returns the gradient for `id`.
    pub fn take(&mut self, id: NodeId) -> Result<Tensor<S>> {
        self.by_node
            .remove(&id)
            .ok_or_else(|| Error::contract(format!("node {} is not a parameter", id.0)))
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor<S>)> {
        self.by_node.iter().map(|(&k, v)| (k, v))
    }
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    checked: bool,
    corrupted: Option<OpKind>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A tape in checked mode: any non-finite value produced or supplied is
    /// reported as [`Error::NonFinite`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
            corrupted: None,
        }
    }

    /// A tape that records non-finite values without complaint.
    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::new()
        }
    }

    /// Scales the local gradient rule of `kind` by 1.25 during backward.
    /// Negative control for gradient checks; never use in real training.
    #[doc(hidden)]
    pub fn corrupt_gradient(&mut self, kind: Option<OpKind>) {
        self.corrupted = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<S> {
        self.value(id).item()
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn get(&self, id: NodeId) -> Result<&Tensor<S>> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::contract(format!("node {} is not on this tape", id.0)))
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Result<NodeId> {
        if self.checked && !value.is_finite() {
            return Err(Error::non_finite(format!("output of {}", op.kind())));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(Op::Leaf { param: false }, value)
    }

    /// Records a parameter leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(Op::Leaf { param: true }, value)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(&Tensor<S>, &Tensor<S>)> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Ok((ta, tb))
    }

    fn one_element(&self, op: &'static str, id: NodeId) -> Result<S> {
        let t = self.get(id)?;
        t.item()
            .map_err(|_| Error::shape(op, format!("expected a scalar operand, got {:?}", t.shape())))
    }

    fn zip_map(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new_unchecked(a.shape().to_vec(), data).expect("shapes already validated")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = self.same_shape("add", a, b)?;
        let v = Self::zip_map(ta, tb, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = self.same_shape("sub", a, b)?;
        let v = Self::zip_map(ta, tb, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    /// Multiplication by a fixed constant.
    pub fn scale_const(&mut self, a: NodeId, c: S) -> Result<NodeId> {
        let v = self.get(a)?.map(|x| x * c);
        self.push(Op::ScaleConst(a, c), v)
    }

    /// Multiplication by a differentiable scalar node.
    pub fn scale(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let s = self.one_element("scale", c)?;
        let v = self.get(a)?.map(|x| x * s);
        self.push(Op::Scale(a, c), v)
    }

    /// Division by a differentiable scalar node.
    pub fn div_scalar(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let s = self.one_element("div_scalar", c)?;
        if s == S::zero() {
            return Err(Error::contract("division by a zero scalar"));
        }
        let v = self.get(a)?.map(|x| x / s);
        self.push(Op::DivScalar(a, c), v)
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mask(&mut self, a: NodeId, mask: Vec<S>) -> Result<NodeId> {
        let ta = self.get(a)?;
        if ta.len() != mask.len() {
            return Err(Error::shape(
                "mask",
                format!("operand has {} values, mask {}", ta.len(), mask.len()),
            ));
        }
        let data = ta.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let v = Tensor::new_unchecked(ta.shape().to_vec(), data)?;
        self.push(Op::Mask(a, mask), v)
    }

    /// Matrix–vector product; `m` is `rows × cols`, `v` has `cols` values.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.get(m)?, self.get(v)?);
        if tm.shape().len() != 2 || tm.cols() != tv.len() {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} times vector of {}", tm.shape(), tv.len()),
            ));
        }
        let x = tv.data();
        let data = (0..tm.rows())
            .map(|i| tm.row(i).iter().zip(x).map(|(&w, &xi)| w * xi).sum())
            .collect();
        self.push(Op::MatVec(m, v), Tensor::vector(data))
    }

    /// `m·v + b`, recorded as a matvec followed by an add.
    pub fn affine(&mut self, m: NodeId, v: NodeId, b: NodeId) -> Result<NodeId> {
        let mv = self.matvec(m, v)?;
        self.add(mv, b)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.get(a)?.map(S::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.get(a)?.map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    /// Max-subtracted softmax over all values of `a`.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.get(a)?;
        if ta.is_empty() {
            return Err(Error::shape("softmax", "empty operand"));
        }
        let v = Tensor::new_unchecked(ta.shape().to_vec(), softmax(ta.data()))?;
        self.push(Op::Softmax(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.get(a)?.map(S::ln);
        self.push(Op::Log(a), v)
    }

    /// `Σ p ln p` with the convention `0 ln 0 = 0`.
    pub fn neg_entropy(&mut self, p: NodeId) -> Result<NodeId> {
        let v = neg_entropy(self.get(p)?.data());
        self.push(Op::NegEntropy(p), Tensor::scalar(v))
    }

    /// `v / max(‖v‖₂, eps)`.
    pub fn l2_normalize(&mut self, a: NodeId, eps: S) -> Result<NodeId> {
        if !(eps > S::zero()) {
            return Err(Error::contract("l2_normalize needs eps > 0"));
        }
        let ta = self.get(a)?;
        let denom = ta.norm_l2().max(eps);
        let v = ta.map(|x| x / denom);
        self.push(Op::L2Normalize(a, eps), v)
    }

    /// Coordinate-wise maximum over equally shaped inputs. Ties go to the
    /// earliest input.
    pub fn coordinate_max(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("coordinate_max of an empty list"))?;
        let shape = self.get(first)?.shape().to_vec();
        let mut best = self.get(first)?.data().to_vec();
        let mut argmax = vec![0usize; best.len()];
        for (k, &id) in inputs.iter().enumerate().skip(1) {
            let t = self.get(id)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "coordinate_max",
                    format!("input {k} has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            for (j, &x) in t.data().iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    argmax[j] = k;
                }
            }
        }
        let v = Tensor::new_unchecked(shape, best)?;
        self.push(Op::CoordinateMax(inputs.to_vec(), argmax), v)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        if ta.len() != tb.len() {
            return Err(Error::shape("dot", format!("{} vs {} values", ta.len(), tb.len())));
        }
        let v = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.get(a)?.data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(v))
    }

    /// Selects coordinate `index` as a scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let ta = self.get(a)?;
        let v = *ta.data().get(index).ok_or_else(|| {
            Error::shape("pick", format!("index {index} out of range for {} values", ta.len()))
        })?;
        self.push(Op::Pick(a, index), Tensor::scalar(v))
    }

    /// Concatenates scalar nodes into a vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let data = scalars
            .iter()
            .map(|&id| self.one_element("stack", id))
            .collect::<Result<Vec<_>>>()?;
        self.push(Op::Stack(scalars.to_vec()), Tensor::vector(data))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.get(a)?.map(S::abs);
        self.push(Op::Abs(a), v)
    }

    /// Propagates `d output / d node` back to every parameter leaf.
    ///
    /// Fan-out contributions are summed. Parameters the output does not
    /// depend on receive zero gradients.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<S>> {
        let out = self.get(output)?;
        if !out.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut adjoint: Vec<Option<Tensor<S>>> = vec![None; output.0 + 1];
        adjoint[output.0] = Some(Tensor::new_unchecked(out.shape().to_vec(), vec![S::one()])?);
        let mut by_node = BTreeMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf { param } = node.op {
                if param {
                    by_node.insert(NodeId(i), g);
                }
                continue;
            }
            let mut contributions = self.local_gradients(node, &g);
            if self.corrupted == Some(node.op.kind()) {
                for (_, t) in &mut contributions {
                    t.scale_in_place(S::of(1.25));
                }
            }
            for (id, t) in contributions {
                match &mut adjoint[id.0] {
                    Some(acc) => acc.axpy(S::one(), &t),
                    slot @ None => *slot = Some(t),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { param: true }) {
                by_node
                    .entry(NodeId(i))
                    .or_insert_with(|| Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { by_node })
    }

    fn local_gradients(&self, node: &Node<S>, g: &Tensor<S>) -> Vec<(NodeId, Tensor<S>)> {
        let y = &node.value;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let like = |t: &Tensor<S>, data: Vec<S>| {
            Tensor::new_unchecked(t.shape().to_vec(), data).expect("gradient shape")
        };
        let gs = g.data();
        match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::ScaleConst(a, c) => vec![(*a, g.map(|x| x * *c))],
            Op::Scale(a, c) => {
                let s = val(*c).data()[0];
                let dc: S = gs.iter().zip(val(*a).data()).map(|(&gi, &ai)| gi * ai).sum();
                vec![(*a, g.map(|x| x * s)), (*c, like(val(*c), vec![dc]))]
            }
            Op::DivScalar(a, c) => {
                let s = val(*c).data()[0];
                let gy: S = gs.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).sum();
                vec![(*a, g.map(|x| x / s)), (*c, like(val(*c), vec![-gy / s]))]
            }
            Op::Mask(a, m) => {
                let data = gs.iter().zip(m).map(|(&gi, &mi)| gi * mi).collect();
                vec![(*a, like(val(*a), data))]
            }
            Op::MatVec(m, v) => {
                let (tm, tv) = (val(*m), val(*v));
                let (rows, cols) = (tm.rows(), tm.cols());
                let mut dm = Vec::with_capacity(rows * cols);
                let mut dv = vec![S::zero(); cols];
                for (i, &gi) in gs.iter().enumerate() {
                    for (j, (&w, &x)) in tm.row(i).iter().zip(tv.data()).enumerate() {
                        dm.push(gi * x);
                        dv[j] = dv[j] + w * gi;
                    }
                }
                vec![(*m, like(tm, dm)), (*v, like(tv, dv))]
            }
            Op::Tanh(a) => {
                let data = gs.iter().zip(y.data()).map(|(&gi, &yi)| gi * (S::one() - yi * yi)).collect();
                vec![(*a, like(val(*a), data))]
            }
            Op::Sigmoid(a) => {
                let data = gs
                    .iter()
                    .zip(y.data())
                    .map(|(&gi, &yi)| gi * yi * (S::one() - yi))
                    .collect();
                vec![(*a, like(val(*a), data))]
            }
            Op::Softmax(a) => {
                let gy: S = gs.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).sum();
                let data = gs.iter().zip(y.data()).map(|(&gi, &yi)| yi * (gi - gy)).collect();
                vec![(*a, like(val(*a), data))]
            }
            Op::Log(a) => {
                let data = gs.iter().zip(val(*a).data()).map(|(&gi, &xi)| gi / xi).collect();
                vec![(*a, like(val(*a), data))]
            }
            Op::NegEntropy(p) => {
                let g0 = gs[0];
                // d(p ln p)/dp = ln p + 1; zero-probability terms carry no gradient.
                let data = val(*p)
                    .data()
                    .iter()
                    .map(|&pi| if pi > S::zero() { g0 * (pi.ln() + S::one()) } else { S::zero() })
                    .collect();
                vec![(*p, like(val(*p), data))]
            }
            Op::L2Normalize(a, eps) => {
                let x = val(*a);
                let n = x.norm_l2();
                let data = if n > *eps {
                    let gy: S = gs.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).sum();
                    gs.iter().zip(y.data()).map(|(&gi, &yi)| (gi - yi * gy) / n).collect()
                } else {
                    gs.iter().map(|&gi| gi / *eps).collect()
                };
                vec![(*a, like(x, data))]
            }
            Op::CoordinateMax(inputs, argmax) => {
                let mut out: Vec<(NodeId, Tensor<S>)> = Vec::new();
                for (k, &id) in inputs.iter().enumerate() {
                    if !argmax.contains(&k) {
                        continue;
                    }
                    let data = gs
                        .iter()
                        .zip(argmax)
                        .map(|(&gi, &w)| if w == k { gi } else { S::zero() })
                        .collect();
                    out.push((id, like(val(id), data)));
                }
                out
            }
            Op::Dot(a, b) => {
                let g0 = gs[0];
                vec![(*a, val(*b).map(|x| x * g0)), (*b, val(*a).map(|x| x * g0))]
            }
            Op::Sum(a) => {
                let g0 = gs[0];
                vec![(*a, val(*a).map(|_| g0))]
            }
            Op::Pick(a, index) => {
                let mut t = Tensor::zeros_like(val(*a));
                t.data_mut()[*index] = gs[0];
                vec![(*a, t)]
            }
            Op::Stack(items) => items
                .iter()
                .zip(gs)
                .map(|(&id, &gi)| (id, like(val(id), vec![gi])))
                .collect(),
            Op::Abs(a) => {
                let data = gs
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&gi, &xi)| {
                        if xi > S::zero() {
                            gi
                        } else if xi < S::zero() {
                            -gi
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                vec![(*a, like(val(*a), data))]
            }
        }
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn neg_entropy<S: Scalar>(p: &[S]) -> S {
    p.iter()
        .map(|&pi| if pi > S::zero() { pi * pi.ln() } else { S::zero() })
        .sum()
}
