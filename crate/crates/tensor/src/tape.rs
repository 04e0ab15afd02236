//! Computation tape for reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and,
//! when any input requires a gradient, a closure that pushes the output
//! gradient back onto the inputs. Node ids are handed out in creation order,
//! so walking the ids backwards is a reverse topological order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::tensor::validate_shape;
use crate::{Scalar, Tensor};

type BackwardFn<S> = Box<dyn Fn(&[S], &mut GradSink<S>)>;

struct Node<S> {
    shape: Vec<usize>,
    value: Rc<Vec<S>>,
    requires_grad: bool,
    backward: Option<BackwardFn<S>>,
}

/// Records operations for one forward/backward pass. Not `Send`: a tape and
/// its variables stay on the thread that created them.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S> Default for Tape<S> {
    fn default() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }
}

impl<S> fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for Var<'_, S> {}

impl<S> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.tape.nodes.borrow()[self.id].shape)
            .finish()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Gradients flow to it iff `tensor.requires_grad`.
    pub fn leaf(&self, tensor: &Tensor<S>) -> Var<'_, S> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), tensor.requires_grad)
    }

    /// Records a leaf that always participates in differentiation.
    pub fn param(&self, tensor: &Tensor<S>) -> Var<'_, S> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), true)
    }

    pub fn constant(&self, tensor: &Tensor<S>) -> Var<'_, S> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), false)
    }

    pub fn constant_from(&self, shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Var<'_, S>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push_leaf(t.shape().to_vec(), t.into_data(), false))
    }

    fn push_leaf(&self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value: Rc::new(data),
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an operation result. `backward` is dropped when none of
    /// `inputs` requires a gradient.
    pub(crate) fn push_op<F>(
        &self,
        shape: Vec<usize>,
        value: Vec<S>,
        inputs: &[usize],
        backward: F,
    ) -> Var<'_, S>
    where
        F: Fn(&[S], &mut GradSink<S>) + 'static,
    {
        self.push_shared(shape, Rc::new(value), inputs, backward)
    }

    pub(crate) fn push_shared<F>(
        &self,
        shape: Vec<usize>,
        value: Rc<Vec<S>>,
        inputs: &[usize],
        backward: F,
    ) -> Var<'_, S>
    where
        F: Fn(&[S], &mut GradSink<S>) + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Vec<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        self.backward_seeded(loss, S::one())
    }

    pub fn backward_seeded(&self, loss: Var<'_, S>, seed: S) -> Result<Gradients<S>> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let len = nodes[loss.id].value.len();
        if len != 1 {
            return shape_err(
                "backward",
                format!("loss must hold one element, found shape {:?}", nodes[loss.id].shape),
            );
        }
        let mut sink = GradSink {
            grads: (0..=loss.id).map(|_| None).collect(),
            sizes: nodes[..=loss.id].iter().map(|n| n.value.len()).collect(),
            requires: nodes[..=loss.id].iter().map(|n| n.requires_grad).collect(),
        };
        if nodes[loss.id].requires_grad {
            sink.grads[loss.id] = Some(vec![seed]);
        }
        for id in (0..=loss.id).rev() {
            let Some(grad) = sink.grads[id].take() else {
                continue;
            };
            if let Some(backward) = &nodes[id].backward {
                backward(&grad, &mut sink);
            }
            sink.grads[id] = Some(grad);
        }
        Ok(Gradients { grads: sink.grads })
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<S> {
    grads: Vec<Option<Vec<S>>>,
    sizes: Vec<usize>,
    requires: Vec<bool>,
}

impl<S: Scalar> GradSink<S> {
    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }

    /// Mutable gradient buffer for node `id`, zero-initialised on first use.
    /// `None` when the node does not require a gradient.
    pub fn slot(&mut self, id: usize) -> Option<&mut [S]> {
        if !self.requires[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(
            self.grads[id]
                .get_or_insert_with(|| vec![S::zero(); size])
                .as_mut_slice(),
        )
    }

    pub fn accumulate(&mut self, id: usize, grad: &[S]) {
        if let Some(slot) = self.slot(id) {
            for (s, g) in slot.iter_mut().zip(grad) {
                *s += *g;
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&[S]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var<'_, S>) -> Option<Vec<S>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, S>) -> Vec<S> {
        self.get(var)
            .map(<[S]>::to_vec)
            .unwrap_or_else(|| vec![S::zero(); var.numel()])
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape<S> {
        self.tape
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(self) -> Rc<Vec<S>> {
        self.tape.value_of(self.id)
    }

    pub fn requires_grad(self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// First element of the value.
    pub fn item(self) -> S {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn to_tensor(self) -> Tensor<S> {
        Tensor::new(self.shape(), self.value().as_ref().clone()).expect("tape holds valid shapes")
    }

    /// Same data, new shape. Shares the forward buffer.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        validate_shape("reshape", &shape)?;
        let numel = self.numel();
        if shape.iter().product::<usize>() != numel {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            );
        }
        let id = self.id;
        Ok(self
            .tape
            .push_shared(shape, self.value(), &[id], move |g, sink| sink.accumulate(id, g)))
    }

    /// Copy that is cut off from the graph.
    pub fn detach(self) -> Self {
        let shape = self.shape();
        let value = self.value();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            requires_grad: false,
            backward: None,
        });
        Var {
            tape: self.tape,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn same_tape(self, other: Var<'_, S>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables from different tapes cannot be combined"
        );
    }
}
