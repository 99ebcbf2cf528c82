use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything a vector-Jacobian product needs at backward time.
pub(crate) struct BackwardCtx<'a> {
    /// Gradient flowing into the op's output.
    pub grad: &'a Tensor,
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    /// Which inputs require a gradient; the closure may skip the others.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    tracked: bool,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so iterating ids backwards is a
/// reverse topological order. A tape is single-threaded; independent tapes can
/// run on different threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
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

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A constant input: no gradient is accumulated for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            tracked: false,
        })
    }

    /// A tracked leaf, e.g. a model parameter or a probed input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            tracked: true,
        })
    }

    /// Records an op. The backward closure is dropped when no input is tracked.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        inputs: &[Var<'t>],
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'t> {
        let tracked = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].tracked)
        };
        self.push(Node {
            value: Rc::new(value),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: tracked.then(|| Box::new(backward) as BackwardFn),
            tracked,
        })
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let seed = {
            let nodes = self.nodes.borrow();
            let value = &nodes[root.id].value;
            if value.numel() != 1 {
                return Err(Error::shape(
                    "backward",
                    value.shape(),
                    "root must hold a single element",
                ));
            }
            Tensor::ones(value.shape())
        };
        self.backward_with(root, seed)
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, root: Var<'_>, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.shape() != seed.shape() {
            return Err(Error::dim("backward", nodes[root.id].value.shape(), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(seed);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor>> =
                node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].tracked).collect();
            let input_grads = backward(&BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for (&parent, g) in node.parents.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[parent].tracked {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[parent].value.shape(), "grad shape of node {parent}");
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        // Tracked leaves that the root does not depend on get an explicit zero.
        for (id, slot) in grads.iter_mut().enumerate() {
            let node = &nodes[id];
            if node.tracked && node.backward.is_none() && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
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
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_tracked(self.id)
    }

    /// Copy of the current value.
    pub fn to_tensor(&self) -> Tensor {
        (*self.value()).clone()
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> bool {
        std::ptr::eq(self.tape, other.tape)
    }
}

/// Result of a reverse pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` for untracked values
    /// and for intermediates (only leaves are retained).
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untracked_ops_keep_no_closure() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = a.scale(3.0);
        assert!(!b.is_tracked());
        assert!(tape.backward(b).unwrap().get(a).is_none());
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[3]));
        let b = tape.leaf(Tensor::ones(&[2]));
        let loss = a.sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // d/dx (x*x + x) = 2x + 1
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap().add(x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(tape.backward(x).is_err());
    }
}
