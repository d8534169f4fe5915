//! Reverse-mode tape.
//!
//! Every operation appends one node whose parents already sit on the tape, so
//! node order is a topological order and the backward sweep is a single
//! reverse pass.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: Var,
        /// Per output cell, the flat index of the winning input cell inside
        /// its (n, c) plane.
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Sum {
        input: Var,
    },
    Reshape {
        input: Var,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Dense {
                input,
                weight,
                bias,
            } => {
                let mut p = vec![*input, *weight];
                p.extend(bias);
                p
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Add { a, b } | Op::Mul { a, b } | Op::ConcatChannels { a, b } => vec![*a, *b],
            Op::MaxPool { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Relu { input }
            | Op::Dropout { input, .. }
            | Op::Sum { input }
            | Op::Reshape { input } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Gradient accumulator handed to per-op backward rules. Only nodes that
/// require gradients ever receive a buffer.
pub(crate) struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    requires: &'a [bool],
    values: &'a [Arc<Tensor<T>>],
}

impl<T: Scalar> GradSink<'_, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub(crate) fn slot(&mut self, v: Var) -> &mut [T] {
        let len = self.values[v.0].numel();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub(crate) fn add(&mut self, v: Var, contrib: &[T]) {
        if !self.wants(v) {
            return;
        }
        let slot = self.slot(v);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += *c;
        }
    }

    pub(crate) fn add_owned(&mut self, v: Var, contrib: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (s, c) in existing.iter_mut().zip(&contrib) {
                    *s += *c;
                }
            }
            empty => *empty = Some(contrib),
        }
    }
}

pub struct Tape<T> {
    values: Vec<Arc<Tensor<T>>>,
    grads: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
    ops: Vec<Op<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Leaf sharing its buffer with the caller (used for parameters, which
    /// are not copied onto the tape).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires = op.parents().iter().any(|p| self.requires[p.0]);
        self.values.push(Arc::new(value));
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the last `backward` call with respect to `v`.
    ///
    /// Every tensor that requires gradients has a buffer after `backward`;
    /// tensors the loss does not depend on get zeros.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v)
            .map(|g| Tensor::from_parts(self.values[v.0].shape().to_vec(), g.to_vec()))
    }

    /// Which branch every piecewise-linear op took: the sign pattern of each
    /// ReLU input and each max-pool winner. Two forward passes with equal
    /// patterns lie on the same linear piece of those ops.
    pub fn branch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for op in &self.ops {
            match op {
                Op::Relu { input } => out.extend(
                    self.values[input.0]
                        .data()
                        .iter()
                        .map(|v| u32::from(*v > T::zero())),
                ),
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Clears all gradient buffers and re-arms `backward`.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar loss, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grads before running it again".into(),
            ));
        }
        self.backward_done = true;
        if !self.requires[loss.0] {
            self.fill_missing_grads();
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.requires[i] || matches!(self.ops[i], Op::Leaf) {
                continue;
            }
            let (before, rest) = self.grads.split_at_mut(i);
            let Some(g) = rest[0].as_deref() else {
                continue;
            };
            let mut sink = GradSink {
                grads: before,
                requires: &self.requires,
                values: &self.values,
            };
            let out = &self.values[i];
            backward_op(&self.ops[i], g, out, &self.values, &mut sink);
        }
        self.fill_missing_grads();
        Ok(())
    }

    fn fill_missing_grads(&mut self) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            if self.requires[i] && g.is_none() {
                *g = Some(vec![T::zero(); self.values[i].numel()]);
            }
        }
    }
}

fn backward_op<T: Scalar>(
    op: &Op<T>,
    g: &[T],
    out: &Tensor<T>,
    values: &[Arc<Tensor<T>>],
    sink: &mut GradSink<'_, T>,
) {
    use super::{conv, dense, elementwise, loss, norm, pool};
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => conv::conv2d_backward(
            g,
            (*input, &values[input.0]),
            (*weight, &values[weight.0]),
            *bias,
            *stride,
            *padding,
            sink,
        ),
        Op::MaxPool { input, argmax } => pool::maxpool_backward(g, *input, argmax, out, sink),
        Op::GlobalAvgPool { input } => pool::gap_backward(g, *input, &values[input.0], sink),
        Op::Relu { input } => elementwise::relu_backward(g, *input, &values[input.0], sink),
        Op::Add { a, b } => {
            sink.add(*a, g);
            sink.add(*b, g);
        }
        Op::Mul { a, b } => {
            elementwise::mul_backward(g, (*a, &values[a.0]), (*b, &values[b.0]), sink)
        }
        Op::ConcatChannels { a, b } => {
            elementwise::concat_backward(g, (*a, &values[a.0]), (*b, &values[b.0]), sink)
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::batch_norm_backward(
            g,
            (*input, &values[input.0]),
            (*gamma, &values[gamma.0]),
            *beta,
            xhat,
            inv_std,
            *batch_stats,
            sink,
        ),
        Op::Dense {
            input,
            weight,
            bias,
        } => dense::dense_backward(
            g,
            (*input, &values[input.0]),
            (*weight, &values[weight.0]),
            *bias,
            sink,
        ),
        Op::SoftmaxCrossEntropy {
            logits,
            probs,
            labels,
        } => loss::softmax_ce_backward(g, *logits, probs, labels, sink),
        Op::Dropout { input, mask } => elementwise::dropout_backward(g, *input, mask, sink),
        Op::Sum { input } => {
            if sink.wants(*input) {
                let seed = g[0];
                sink.slot(*input).iter_mut().for_each(|s| *s += seed);
            }
        }
        Op::Reshape { input } => sink.add(*input, g),
    }
}
