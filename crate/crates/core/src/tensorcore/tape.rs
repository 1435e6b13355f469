//! Reverse-mode differentiation over a linear recording of executed ops.
//!
//! Every op appends one node holding its output value, the indices of its input
//! nodes and a [`Backward`] rule. [`Tape::backward`] walks the nodes once in
//! reverse order, so each recorded op is visited exactly once.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative rule of a recorded op.
pub trait Backward: Send + Sync {
    /// Returns one gradient per input. `needs[i]` is false when input `i` does
    /// not require a gradient; implementations may return `None` there.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the output of a custom op. The node requires a gradient iff any
    /// input does.
    pub fn record(&mut self, value: Tensor, inputs: &[Var], op: Box<dyn Backward>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: Some(op),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradients of the scalar `loss` with respect to every leaf that requires
    /// one. Intermediate gradients are released as soon as they are consumed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let local = op.backward(&inputs, &node.value, &g, &needs);
            for ((&j, need), lg) in node.inputs.iter().zip(&needs).zip(local) {
                if !need {
                    continue;
                }
                if let Some(lg) = lg {
                    match &mut grads[j] {
                        Some(acc) => acc.add_assign(&lg)?,
                        slot => *slot = Some(lg),
                    }
                }
            }
        }
        // Keep leaf gradients only.
        for (i, g) in grads.iter_mut().enumerate() {
            if self.nodes[i].op.is_some() || !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
