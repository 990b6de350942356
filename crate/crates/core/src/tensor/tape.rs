//! Reverse-mode differentiation tape.
//!
//! Every op executed through a [`Var`] appends one node holding its output
//! value. Nodes that depend on a `requires_grad` leaf also hold a backward
//! closure mapping the output gradient to input gradients. Node ids increase in
//! execution order, so walking ids downward from the loss is a reverse
//! topological traversal.
//!
//! A tape is single-use: [`Tape::backward`] consumes the recorded closures and
//! a second call is a usage error.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Default)]
struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// A leaf that gradients are tracked for.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Records an op output. `make_backward` is only invoked when some parent
    /// requires a gradient; it receives a flag per parent telling which ones.
    pub(crate) fn record<'t, F>(
        &'t self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        make_backward: F,
    ) -> Result<Var<'t, T>>
    where
        F: FnOnce(&[bool]) -> BackwardFn<T>,
    {
        value.ensure_finite(op)?;
        let flags: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
        let requires_grad = flags.iter().any(|&f| f);
        let backward = requires_grad.then(|| make_backward(&flags));
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::Usage(format!(
                "op `{op}` recorded on a tape whose backward pass already ran"
            )));
        }
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward,
        });
        Ok(Var {
            tape: self,
            id: inner.nodes.len() - 1,
        })
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// `requires_grad` leaf that the loss depends on.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::Usage(
                "backward called twice on the same tape; re-run the forward pass".into(),
            ));
        }
        let seed_value = inner.nodes[loss.id].value.clone();
        if seed_value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                seed_value.shape()
            )));
        }
        inner.consumed = true;

        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(seed_value.shape().to_vec()));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut inner.nodes[id];
            match node.backward.take() {
                Some(backward) => {
                    let parents = node.parents.clone();
                    let parent_grads = backward(&g);
                    debug_assert_eq!(parent_grads.len(), parents.len());
                    for (pid, pg) in parents.into_iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !inner.nodes[pid].requires_grad {
                            continue;
                        }
                        match &mut grads[pid] {
                            Some(acc) => acc.add_assign(&pg)?,
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
                None if node.parents.is_empty() && node.requires_grad => {
                    grads[id] = Some(g);
                }
                None => {}
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copies the current value out of the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Usage("vars recorded on different tapes".into()))
        }
    }
}

/// Gradients of `requires_grad` leaves, indexed by their [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}
