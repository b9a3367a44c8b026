//! Reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Each
//! recorded node keeps its forward value, the ids of its inputs, and a
//! closure mapping the output adjoint to input adjoints. Node ids are
//! assigned in creation order, so inputs always precede the nodes that use
//! them and a single reverse sweep visits each node once.
//!
//! The tape is single-threaded (`RefCell`) and meant to be rebuilt for every
//! forward pass.

pub(crate) mod linalg;
mod loss;
pub(crate) mod ops;
mod radial;
mod tensor;

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use crate::symcore::LinalgError;

pub use linalg::EigFn;
pub use ops::Unary;
pub use radial::{RadialMap, BALL_MAX_NORM};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("input to {op} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { op: &'static str, asymmetry: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Inputs handed to a backward rule.
pub(crate) struct Ctx<'a> {
    pub grad: &'a Tensor,
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    /// Whether each input needs an adjoint at all.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = Box<dyn Fn(&Ctx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
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

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), false)
    }

    /// Constant leaf sharing an existing buffer (used for large feature matrices).
    pub fn constant_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&self, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor,
        parents: &[Var<'_>],
        backward: BackwardFn,
    ) -> Result<Var<'_>, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    /// Reverse sweep from a scalar loss. Every call recomputes adjoints from
    /// scratch, so repeated calls return identical gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AdError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(AdError::NotScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<Rc<Tensor>> =
                node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let ctx = Ctx { grad: &grad, inputs: &inputs, output: &node.value, needs: &needs };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[p].value.len());
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[p] = Some(g),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value (panics in debug builds if not single-element).
    pub fn item(&self) -> f64 {
        self.value().item()
    }
}
