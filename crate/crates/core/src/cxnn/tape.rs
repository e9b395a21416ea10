//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Nodes may have
//! several outputs (complex ops return real and imaginary planes); a backward
//! closure receives one gradient per output and returns one optional gradient
//! per input. Only nodes that transitively depend on a tracked leaf keep
//! their closure.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::real::Real;

/// Receives output gradients and a per-input "needs gradient" mask.
pub type BackwardFn<S> = Box<dyn Fn(&[Tensor<S>], &[bool]) -> Vec<Option<Tensor<S>>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId {
    node: usize,
    slot: usize,
}

struct Node<S: Real> {
    values: Vec<Rc<Tensor<S>>>,
    inputs: Vec<VarId>,
    backward: Option<BackwardFn<S>>,
    tracked: bool,
    leaf: bool,
}

pub struct Tape<S: Real> {
    nodes: RefCell<Vec<Node<S>>>,
    exec: Exec,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t, S: Real> {
    tape: &'t Tape<S>,
    id: VarId,
}

impl<S: Real> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var({}:{} {:?})",
            self.id.node,
            self.id.slot,
            self.shape()
        )
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            values: vec![Rc::new(value)],
            inputs: Vec::new(),
            backward: None,
            tracked: requires_grad,
            leaf: true,
        });
        Var {
            tape: self,
            id: VarId {
                node: nodes.len() - 1,
                slot: 0,
            },
        }
    }

    /// Records an operation. `backward` is dropped when no input is tracked.
    pub fn record(
        &self,
        inputs: &[Var<'_, S>],
        outputs: Vec<Tensor<S>>,
        backward: BackwardFn<S>,
    ) -> Vec<Var<'_, S>> {
        let mut nodes = self.nodes.borrow_mut();
        let tracked = inputs.iter().any(|v| nodes[v.id.node].tracked);
        let n_out = outputs.len();
        nodes.push(Node {
            values: outputs.into_iter().map(Rc::new).collect(),
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: tracked.then_some(backward),
            tracked,
            leaf: false,
        });
        let node = nodes.len() - 1;
        (0..n_out)
            .map(|slot| Var {
                tape: self,
                id: VarId { node, slot },
            })
            .collect()
    }

    pub(crate) fn record1(
        &self,
        inputs: &[Var<'_, S>],
        output: Tensor<S>,
        backward: BackwardFn<S>,
    ) -> Var<'_, S> {
        self.record(inputs, vec![output], backward)
            .pop()
            .expect("one output")
    }

    fn value_of(&self, id: VarId) -> Rc<Tensor<S>> {
        self.nodes.borrow()[id.node].values[id.slot].clone()
    }

    /// Reverse sweep from a scalar `loss`; returns gradients of tracked leaves.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id.node];
        if root.values[loss.id.slot].numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.values[loss.id.slot].shape()
            )));
        }
        if !root.tracked {
            return Err(Error::Untracked);
        }
        let mut grads: Vec<Option<Vec<Option<Tensor<S>>>>> =
            (0..=loss.id.node).map(|_| None).collect();
        let mut seed = vec![None; root.values.len()];
        seed[loss.id.slot] = Some(Tensor::full(root.values[loss.id.slot].shape(), S::one()));
        grads[loss.id.node] = Some(seed);

        let mut leaves = HashMap::new();
        for idx in (0..=loss.id.node).rev() {
            let Some(slots) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if node.leaf {
                if let Some(g) = slots.into_iter().next().flatten() {
                    leaves.insert(idx, g);
                }
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let out_grads: Vec<Tensor<S>> = slots
                .into_iter()
                .zip(&node.values)
                .map(|(g, v)| g.unwrap_or_else(|| Tensor::zeros(v.shape())))
                .collect();
            let needs: Vec<bool> = node.inputs.iter().map(|i| nodes[i.node].tracked).collect();
            let in_grads = backward(&out_grads, &needs);
            debug_assert_eq!(in_grads.len(), node.inputs.len());
            for ((input, g), need) in node.inputs.iter().zip(in_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(
                    g.shape(),
                    nodes[input.node].values[input.slot].shape(),
                    "gradient shape for input of node {idx}"
                );
                let entry = grads[input.node]
                    .get_or_insert_with(|| vec![None; nodes[input.node].values.len()]);
                match &mut entry[input.slot] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradients of tracked leaves, looked up by the leaf [`Var`].
pub struct Gradients<S: Real> {
    leaves: HashMap<usize, Tensor<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.leaves.get(&var.id.node)
    }

    /// Gradient of `var`, or zeros if the loss did not reach it.
    pub fn get_or_zeros(&self, var: Var<'_, S>) -> Tensor<S> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, S>) -> Option<Tensor<S>> {
        self.leaves.remove(&var.id.node)
    }
}

impl<'t, S: Real> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id.node].tracked
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> S {
        self.value().data()[0]
    }
}
