//! Tape-based reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its output value and the
//! data its backward rule needs. [`Graph::backward`] walks the tape once in
//! reverse order and then refuses further backward passes.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T: Element> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Concat(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Sum(Var),
    MulConst {
        input: Var,
        factor: Tensor<T>,
    },
}

impl<T: Element> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Relu(x) | Op::AvgPool2(x) | Op::GlobalAvgPool(x) | Op::Reshape(x) | Op::Sum(x) => vec![*x],
            Op::MaxPool2 { input, .. } => vec![*input],
            Op::Linear { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::Concat(xs) => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::MulConst { input, .. } => vec![*input],
        }
    }
}

pub(crate) struct Node<T: Element> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T: Element = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => other.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input whose gradient is tracked and readable through [`Graph::grad`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a snapshot of a stored parameter. Its gradient is added to
    /// the store's `grad` on backward when the parameter is trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id));
        self.nodes[v.0].requires_grad = p.trainable;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    /// Reinterprets `x` as an `N×(C·H·W)` matrix.
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = self
            .value(x)
            .clone()
            .reshape(Shape::matrix(s.n, s.item_len()))
            .expect("same element count");
        self.push(out, Op::Reshape(x))
    }

    /// Channel-wise concatenation.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::EmptyOutput {
            op: "concat",
            detail: "no inputs".into(),
        })?);
        let mut channels = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s,
                });
            }
            channels += s.c;
        }
        let shape = Shape::new(first.n, channels, first.h, first.w);
        let mut out = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for &x in xs {
                out.extend_from_slice(self.value(x).item(n));
            }
        }
        let out = Tensor::from_vec(shape, out)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    /// Sum of every element, as a scalar-shaped node.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Tensor<T>) -> Result<Var> {
        let s = self.shape(x);
        if factor.shape() != s {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                left: s,
                right: factor.shape(),
            });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(factor.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let out = Tensor::from_vec(s, data)?;
        Ok(self.push(out, Op::MulConst { input: x, factor }))
    }

    /// Propagates gradients from the scalar `root` to every node on the
    /// tape and accumulates trainable parameter gradients into `store`.
    pub fn backward(&mut self, root: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.shape(root);
        if shape != Shape::SCALAR {
            return Err(Error::NonScalarRoot(shape));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=root.0).rev() {
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &upstream)?;
            }
            if let Op::Param(id) = self.nodes[i].op {
                let p = store.get_mut(id);
                if p.trainable {
                    for (g, &u) in p.grad.data_mut().iter_mut().zip(upstream.data()) {
                        *g += u;
                    }
                }
            }
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, delta: Tensor<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut self.grads[target.0] {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, up: &Tensor<T>) -> Result<()> {
        let mut deltas: Vec<(Var, Tensor<T>)> = Vec::new();
        {
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(up.data())
                        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
                        .collect();
                    deltas.push((*x, Tensor::from_vec(xv.shape(), data)?));
                }
                Op::Reshape(x) => {
                    deltas.push((*x, up.clone().reshape(self.shape(*x))?));
                }
                Op::Sum(x) => {
                    deltas.push((*x, Tensor::full(self.shape(*x), up.data()[0])));
                }
                Op::MulConst { input, factor } => {
                    let data = up.data().iter().zip(factor.data()).map(|(&g, &f)| g * f).collect();
                    deltas.push((*input, Tensor::from_vec(factor.shape(), data)?));
                }
                Op::Concat(xs) => {
                    let s = up.shape();
                    let mut offset = 0;
                    for &x in xs {
                        let xs_shape = self.shape(x);
                        let item = xs_shape.item_len();
                        let mut d = Vec::with_capacity(xs_shape.len());
                        for n in 0..s.n {
                            let base = n * s.item_len() + offset;
                            d.extend_from_slice(&up.data()[base..base + item]);
                        }
                        offset += item;
                        if self.wants(x) {
                            deltas.push((x, Tensor::from_vec(xs_shape, d)?));
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (dx, dk) = crate::conv::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        up,
                        *stride,
                        *pad,
                        self.wants(*input),
                        self.wants(*kernel),
                    );
                    if let Some(dx) = dx {
                        deltas.push((*input, dx));
                    }
                    if let Some(dk) = dk {
                        deltas.push((*kernel, dk));
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (dx, dg, db) = crate::layers::norm::batch_norm_backward(
                        self.shape(*input),
                        self.value(*gamma).data(),
                        xhat,
                        inv_std,
                        *batch_stats,
                        up,
                    );
                    deltas.push((*input, dx));
                    deltas.push((*gamma, dg));
                    deltas.push((*beta, db));
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = Tensor::zeros(self.shape(*input));
                    for (&src, &g) in argmax.iter().zip(up.data()) {
                        dx.data_mut()[src] += g;
                    }
                    deltas.push((*input, dx));
                }
                Op::AvgPool2(x) => {
                    deltas.push((*x, crate::layers::pool::avg_pool2_backward(self.shape(*x), up)));
                }
                Op::GlobalAvgPool(x) => {
                    let s = self.shape(*x);
                    let scale = T::one() / T::from_usize(s.plane()).unwrap();
                    let mut dx = Tensor::zeros(s);
                    for (plane, &g) in dx.data_mut().chunks_mut(s.plane()).zip(up.data()) {
                        plane.iter_mut().for_each(|v| *v = g * scale);
                    }
                    deltas.push((*x, dx));
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) = crate::layers::dense::linear_backward(
                        self.value(*input),
                        self.value(*weight),
                        up,
                        self.wants(*input),
                    );
                    if let Some(dx) = dx {
                        deltas.push((*input, dx));
                    }
                    deltas.push((*weight, dw));
                    if let Some(b) = bias {
                        deltas.push((*b, db));
                    }
                }
                Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                    let s = self.shape(*logits);
                    let scale = up.data()[0] / T::from_usize(s.n).unwrap();
                    let mut d = probs.clone();
                    for (n, &label) in labels.iter().enumerate() {
                        d[n * s.c + label] -= T::one();
                    }
                    d.iter_mut().for_each(|v| *v *= scale);
                    deltas.push((*logits, Tensor::from_vec(s, d)?));
                }
            }
        }
        for (target, delta) in deltas {
            self.accumulate(target, delta);
        }
        Ok(())
    }
}
