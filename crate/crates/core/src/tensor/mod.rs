//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable operation used by the attention layers, CNN
//! backbones and losses lives here. An operation records its inputs and a
//! backward rule on the output node; calling [`Tensor::backward`] on a
//! scalar walks the graph once in reverse topological order and
//! accumulates gradients additively into every node that requires them.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use rand_distr::StandardNormal;
use thiserror::Error;

mod adam;
mod check;
mod ops;
mod spatial;

#[cfg(test)]
mod tests;

pub use adam::{Adam, AdamState};
pub use check::{grad_check, DEFAULT_STEP};
pub use spatial::{pixel_center_x, pixel_center_y};

/// Errors produced by tensor construction and operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle to a node in the computation graph. Cloning is cheap and shares
/// the underlying storage; use [`Tensor::detach`] for an independent copy.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<RefCell<Node>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.node.borrow();
        write!(
            f,
            "Tensor{:?} requires_grad={} head={:?}",
            n.shape,
            n.requires_grad,
            &n.data[..n.data.len().min(4)]
        )
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// New constant tensor from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidArg {
                op: "from_vec",
                msg: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    /// New trainable parameter tensor (leaf with `requires_grad`).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        t.node.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; shape.iter().product()], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![value; shape.iter().product()], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false)
    }

    /// Uniform draws in `[lo, hi)`; the caller threads the seeded RNG.
    pub fn rand_uniform<R: rand::Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Gaussian draws with the given standard deviation.
    pub fn randn<R: rand::Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Tensor::leaf(shape.to_vec(), data, false)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    /// Copy of the stored values.
    pub fn data(&self) -> Vec<f64> {
        self.node.borrow().data.clone()
    }

    /// Copy of the accumulated gradient, if a backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.node.borrow();
        assert_eq!(n.data.len(), 1, "item() on tensor of shape {:?}", n.shape);
        n.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.node.borrow_mut().requires_grad = flag;
    }

    /// Overwrite stored values in place (same length). Used by the optimizer
    /// and the finite-difference checker.
    pub fn set_data(&self, data: &[f64]) {
        let mut n = self.node.borrow_mut();
        assert_eq!(n.data.len(), data.len(), "set_data length mismatch");
        n.data.copy_from_slice(data);
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Independent constant copy, cut off from the recorded graph.
    pub fn detach(&self) -> Tensor {
        let n = self.node.borrow();
        Tensor::leaf(n.shape.clone(), n.data.clone(), false)
    }

    pub(crate) fn data_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub(crate) fn shape_ref(&self) -> Ref<'_, [usize]> {
        Ref::map(self.node.borrow(), |n| n.shape.as_slice())
    }

    pub(crate) fn add_grad(&self, contrib: &[f64]) {
        let mut n = self.node.borrow_mut();
        if !n.requires_grad {
            return;
        }
        let len = n.data.len();
        debug_assert_eq!(len, contrib.len());
        let grad = n.grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    /// Record a new op output. When no input requires gradient the parents
    /// and the backward rule are dropped so constant subgraphs stay flat.
    pub(crate) fn make(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) + 'static,
    ) -> Result<Tensor> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(op, &data)?;
        let requires = parents.iter().any(|p| p.node.borrow().requires_grad);
        let node = if requires {
            Node {
                shape,
                data,
                grad: None,
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }
        } else {
            Node {
                shape,
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                backward: None,
            }
        };
        Ok(Tensor {
            node: Rc::new(RefCell::new(node)),
        })
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let key = |t: &Tensor| Rc::as_ptr(&t.node) as usize;
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        visited.insert(key(self));
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((t, idx)) = stack.pop() {
            let parent = {
                let n = t.node.borrow();
                n.parents.get(idx).cloned()
            };
            match parent {
                Some(p) => {
                    stack.push((t, idx + 1));
                    if visited.insert(key(&p)) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(t),
            }
        }
        order
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate
    /// additively; each node's rule runs exactly once.
    pub fn backward(&self) -> Result<()> {
        {
            let n = self.node.borrow();
            if n.data.len() != 1 {
                return Err(TensorError::InvalidArg {
                    op: "backward",
                    msg: format!("root must be scalar, got shape {:?}", n.shape),
                });
            }
            if !n.requires_grad {
                return Err(TensorError::InvalidArg {
                    op: "backward",
                    msg: "root does not require grad".into(),
                });
            }
        }
        let order = self.topo_order();
        {
            let mut n = self.node.borrow_mut();
            let grad = n.grad.get_or_insert_with(|| vec![0.0]);
            grad[0] += 1.0;
        }
        for t in order.iter().rev() {
            let n = t.node.borrow();
            if let (Some(grad), Some(back)) = (n.grad.clone(), n.backward.as_ref()) {
                back(&grad);
            }
        }
        Ok(())
    }
}
