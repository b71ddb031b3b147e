//! Tape that records a forward computation and replays it in reverse.
//!
//! Every operation appends a node holding its output value, the handles of
//! its inputs and (when any input is tracked) a closure mapping the output
//! gradient to input gradients. [`Graph::backward`] walks the tape from a
//! scalar root towards the leaves.
//!
//! A graph holds a single sample; batching happens one level up by running
//! independent graphs and summing parameter gradients in a fixed order.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::error::{GraphError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a backward closure.
pub struct BackwardArgs<'a, S> {
    pub inputs: Vec<&'a Tensor<S>>,
    pub output: &'a Tensor<S>,
    pub grad: &'a Tensor<S>,
    /// Which inputs need a gradient; closures may skip the others.
    pub wants: Vec<bool>,
}

pub type BackwardFn<S> = Box<dyn Fn(&BackwardArgs<'_, S>) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    op: &'static str,
    value: Tensor<S>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<S>>,
    tracked: bool,
}

pub struct Graph<S> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<HashMap<ParamId, Var>>,
    first_nonfinite: RefCell<Option<&'static str>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            first_nonfinite: RefCell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<S>) -> Var {
        if !node.value.is_finite() {
            let mut first = self.first_nonfinite.borrow_mut();
            if first.is_none() {
                *first = Some(node.op);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Untracked constant input.
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.push_node(Node {
            op: "constant",
            value,
            inputs: vec![],
            backward: None,
            tracked: false,
        })
    }

    /// Tracked leaf; its gradient is available after [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<S>) -> Var {
        self.push_node(Node {
            op: "leaf",
            value,
            inputs: vec![],
            backward: None,
            tracked: true,
        })
    }

    /// Loads a parameter onto the tape once; later calls reuse the node so
    /// gradients from repeated uses accumulate on one leaf. Frozen
    /// parameters enter as constants.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let entry = store.entry(id);
        let v = self.push_node(Node {
            op: "param",
            value: entry.value.clone(),
            inputs: vec![],
            backward: None,
            tracked: entry.trainable,
        });
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// Records an operation. `backward` is dropped when no input is tracked.
    pub fn custom_op(
        &self,
        op: &'static str,
        value: Tensor<S>,
        inputs: &[Var],
        backward: BackwardFn<S>,
    ) -> Var {
        let tracked = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].tracked)
        };
        self.push_node(Node {
            op,
            value,
            inputs: inputs.to_vec(),
            backward: tracked.then_some(backward),
            tracked,
        })
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].tracked
    }

    /// Name of the first operation that produced a NaN or infinity.
    pub fn first_nonfinite(&self) -> Option<&'static str> {
        *self.first_nonfinite.borrow()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    /// Copy of a value cut off from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let n_root = &nodes[root.0];
        if n_root.value.numel() != 1 {
            return Err(GraphError::shape(
                "backward",
                format!("root must hold one element, got shape {:?}", n_root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(n_root.value.shape(), S::one()));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let wants: Vec<bool> = node.inputs.iter().map(|v| nodes[v.0].tracked).collect();
            let args = BackwardArgs {
                inputs: node.inputs.iter().map(|v| &nodes[v.0].value).collect(),
                output: &node.value,
                grad: &grad,
                wants,
            };
            let input_grads = backward(&args);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (var, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[var.0].tracked {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    nodes[var.0].value.shape(),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: HashMap<ParamId, Var>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a leaf. Interior nodes are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }

    /// One slot per parameter in `store`, `None` where untouched or frozen.
    pub fn param_grads(&self, store: &ParamStore<S>) -> Vec<Option<Tensor<S>>> {
        store.ids().map(|id| self.param(id).cloned()).collect()
    }
}
