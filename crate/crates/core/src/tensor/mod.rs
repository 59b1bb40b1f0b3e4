//! Dense row-major tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted node. Operations record
//! their operands and a backward closure; [`Tensor::backward`] walks the
//! reachable nodes in reverse creation order (creation order is a valid
//! topological order because operands always exist before their results)
//! and accumulates gradients into leaves that were created with
//! `requires_grad`. Leaf gradients accumulate across repeated calls until
//! [`Tensor::zero_grad`] is invoked.
//!
//! Graphs are confined to the thread that built them.

mod conv;
mod linalg;
mod ops;
mod shape;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) use ops::sigmoid;
pub use shape::GATHER_ZERO;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Arguments handed to a backward closure.
pub struct GradArgs<'a, T: Scalar> {
    /// Gradient of the loss with respect to the op output.
    pub grad: &'a [T],
    /// Forward output values.
    pub output: &'a [T],
    /// Operands in the order they were recorded.
    pub inputs: &'a [Tensor<T>],
}

impl<T: Scalar> GradArgs<'_, T> {
    /// Whether operand `i` needs a gradient.
    #[inline]
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

/// Maps the output gradient onto one optional gradient per operand.
pub type BackwardFn<T> = Box<dyn Fn(&GradArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    inputs: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Reference-counted tensor handle. Cloning is cheap.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        inputs: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel_of(&shape));
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            inputs,
            backward,
        }))
    }

    /// Constant tensor; fails if `data.len()` is not the product of `shape`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor, optionally tracked for gradients.
    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("zero extent in shape {shape:?}"),
            ));
        }
        if data.len() != numel_of(shape) {
            return Err(Error::dim(
                "tensor",
                format!("data length {} does not match shape {shape:?}", data.len()),
            ));
        }
        Ok(Self::build(
            data,
            shape.to_vec(),
            requires_grad,
            Vec::new(),
            None,
        ))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(
            vec![value; numel_of(shape)],
            shape.to_vec(),
            false,
            Vec::new(),
            None,
        )
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], vec![1], false, Vec::new(), None)
    }

    /// Records the result of a differentiable operation.
    ///
    /// The backward closure is dropped (and operands released) when no
    /// operand requires a gradient.
    pub fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        assert_eq!(
            data.len(),
            numel_of(&shape),
            "op output does not match its shape"
        );
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        if requires_grad {
            Self::build(data, shape, true, inputs, Some(backward))
        } else {
            Self::build(data, shape, false, Vec::new(), None)
        }
    }

    /// Result of a non-differentiable computation that carries no history.
    pub(crate) fn constant(data: Vec<T>, shape: Vec<usize>) -> Self {
        Self::build(data, shape, false, Vec::new(), None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    /// Clears the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values without history.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.data.clone(), self.0.shape.clone())
    }

    /// Same values, new untracked/tracked leaf.
    pub fn to_leaf(&self, requires_grad: bool) -> Self {
        Self::build(
            self.0.data.clone(),
            self.0.shape.clone(),
            requires_grad,
            Vec::new(),
            None,
        )
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Back-propagates from a single-element tensor into every reachable
    /// leaf that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Collect tracked nodes reachable from the loss.
        let mut seen: HashSet<u64> = HashSet::new();
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.0.id) {
                continue;
            }
            for input in &t.0.inputs {
                stack.push(input.clone());
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.0.id, vec![T::one()]);
        for node in &order {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let input_grads = f(&GradArgs {
                        grad: &g,
                        output: &node.0.data,
                        inputs: &node.0.inputs,
                    });
                    debug_assert_eq!(input_grads.len(), node.0.inputs.len());
                    for (input, ig) in node.0.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel());
                        match grads.get_mut(&input.0.id) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(input.0.id, ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dim(op, format!("shapes {a:?} and {b:?} differ")))
    }
}
