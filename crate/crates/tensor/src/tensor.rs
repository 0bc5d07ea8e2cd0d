//! The tensor type and the define-by-run reverse-mode engine.
//!
//! Every differentiable op records a [`Node`] on its output holding the input
//! handles and a backward closure. Calling [`Tensor::backward`] on a scalar
//! walks that graph in reverse topological order and accumulates gradients
//! into the leaves that were created with `requires_grad`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::element::Element;
use crate::error::{dim_err, Result, TensorError};

/// Maps the upstream gradient of an op's output to gradients of its inputs.
///
/// The mask says which inputs need a gradient; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct Node<T: Element> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// Dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<T: Element = f32>(Arc<Inner<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    /// Builds a constant leaf.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(dim_err!("zero extent in shape {:?}", shape));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel_of(shape)], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: None,
        }))
    }

    /// A new leaf with the same values that tracks (or stops tracking) gradients.
    pub fn with_grad(&self, requires_grad: bool) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), requires_grad)
    }

    /// A constant copy cut from the graph.
    pub fn detach(&self) -> Self {
        self.with_grad(false)
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        op: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node {
            op,
            inputs,
            backward,
        });
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn values(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Accumulated gradient, present after a backward pass reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Gradients from several uses of the same tensor are summed, and repeated
    /// calls keep accumulating into the leaves until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(upstream) = pending.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => add_into(acc, &upstream),
                        None => *slot = Some(upstream),
                    }
                }
                Some(node) => {
                    let mask: Vec<bool> = node.inputs.iter().map(|i| i.requires_grad()).collect();
                    let grads = (node.backward)(&upstream, &mask);
                    debug_assert_eq!(grads.len(), node.inputs.len());
                    for ((input, g), needed) in node.inputs.iter().zip(grads).zip(mask) {
                        let Some(g) = g else { continue };
                        if !needed {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel(), "{} backward", node.op);
                        match pending.get_mut(&input.key()) {
                            Some(acc) => add_into(acc, &g),
                            None => {
                                pending.insert(input.key(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // Post-order over the grad-requiring subgraph; every node appears once.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        seen.insert(self.key());
        let mut stack = vec![(self.clone(), 0usize)];
        while let Some((t, next)) = stack.pop() {
            let child = t.0.node.as_ref().and_then(|n| n.inputs.get(next).cloned());
            match child {
                Some(child) => {
                    stack.push((t, next + 1));
                    if child.requires_grad() && seen.insert(child.key()) {
                        stack.push((child, 0));
                    }
                }
                None => order.push(t),
            }
        }
        order
    }
}

pub(crate) fn add_into<T: Element>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("values", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_count() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.is_leaf());
        assert!(t.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let t = Tensor::<f64>::ones(&[2]).with_grad(true);
        assert!(matches!(t.backward(), Err(TensorError::Contract(_))));
    }

    #[test]
    fn backward_on_leaf_seeds_one() {
        let t = Tensor::<f64>::scalar(3.0).with_grad(true);
        t.backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1.0]);
        t.backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![2.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
