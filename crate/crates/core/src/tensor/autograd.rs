use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording a computation graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Gradient rule of a recorded op: maps the output gradient to one optional gradient per
/// parent, in parent order. Parents that do not require grad may get `None`.
pub(crate) trait BackwardFn: Send + Sync {
    fn backward(&self, grad: &[Real], parents: &[Var]) -> Vec<Option<Vec<Real>>>;
}

impl<F> BackwardFn for F
where
    F: Fn(&[Real], &[Var]) -> Vec<Option<Vec<Real>>> + Send + Sync,
{
    fn backward(&self, grad: &[Real], parents: &[Var]) -> Vec<Option<Vec<Real>>> {
        self(grad, parents)
    }
}

struct Node {
    op: &'static str,
    value: Tensor,
    requires_grad: bool,
    // Only leaves keep a persistent gradient; intermediate gradients live in the
    // backward pass's scratch map.
    grad: Mutex<Option<Vec<Real>>>,
    backward: Option<Box<dyn BackwardFn>>,
    parents: Vec<Var>,
}

/// A tensor participating in (possibly) recorded computation.
///
/// Cloning a `Var` is cheap and shares the node. Values are immutable once created; only
/// the gradient buffer of a leaf is mutated, and only by [`Var::backward`].
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("op", &self.0.op)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var(Arc::new(Node {
            op: "constant",
            value,
            requires_grad: false,
            grad: Mutex::new(None),
            backward: None,
            parents: Vec::new(),
        }))
    }

    /// A trainable leaf whose gradient accumulates across backward passes.
    pub fn leaf(value: Tensor) -> Var {
        Var(Arc::new(Node {
            op: "leaf",
            value,
            requires_grad: true,
            grad: Mutex::new(None),
            backward: None,
            parents: Vec::new(),
        }))
    }

    /// Record the output of an op. Fails if the output holds NaN or Inf.
    pub(crate) fn from_op(
        op: &'static str,
        value: Tensor,
        parents: Vec<Var>,
        backward: impl BackwardFn + 'static,
    ) -> Result<Var> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                op,
                format!(
                    "non-finite value {} at flat index {pos} of output {}",
                    value.data()[pos],
                    value.shape()
                ),
            ));
        }
        let requires_grad = is_grad_enabled() && parents.iter().any(Var::requires_grad);
        let (backward, parents): (Option<Box<dyn BackwardFn>>, _) = if requires_grad {
            (Some(Box::new(backward)), parents)
        } else {
            (None, Vec::new())
        };
        Ok(Var(Arc::new(Node {
            op,
            value,
            requires_grad,
            grad: Mutex::new(None),
            backward,
            parents,
        })))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[Real] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor> {
        let g = self.0.grad.lock().expect("gradient lock poisoned");
        g.as_ref()
            .map(|g| Tensor::new(self.shape(), g.clone()).expect("gradient length matches value"))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("gradient lock poisoned") = None;
    }

    /// A constant copy of this value, cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Back-propagate from a scalar, accumulating `d self / d leaf` into every reachable
    /// leaf that requires grad.
    pub fn backward(&self) -> Result<()> {
        if self.shape().numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar, got shape {}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut grads: HashMap<usize, Vec<Real>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = grads.remove(&node.key()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.lock().expect("gradient lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(rule) => {
                    let parent_grads = rule.backward(&grad, &node.0.parents);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.shape().numel(), "{}", node.0.op);
                        match grads.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                grads.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require grad: every node appears after all of its parents.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, next)) = stack.pop() {
            if let Some(parent) = node.0.parents.get(next) {
                let parent = parent.clone();
                stack.push((node, next + 1));
                if parent.requires_grad() && visited.insert(parent.key()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}
