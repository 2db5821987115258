//! Dense f64 tensors with dynamic-tape reverse-mode automatic differentiation.
//!
//! Every op builds a fresh graph node holding its parents and a backward
//! closure. `backward()` on a scalar walks the graph once in reverse
//! topological order and accumulates gradients into every `requires_grad`
//! leaf. The graph is freed when the output tensors are dropped, so each
//! training step records and releases its own tape.

mod conv;
mod linalg;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} got {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A dense N-dimensional f64 array, optionally tracked on the tape.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::leaf(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Leaf tensor that participates in gradient accumulation (a parameter
    /// or an input under test).
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::leaf(shape, data, true))
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Derived node. Records the tape edge only when some parent needs a
    /// gradient; eval-mode forwards build no graph at all.
    fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad: true,
                grad: RefCell::new(None),
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place data update for optimizer steps on leaf parameters. The
    /// tape holds values by node, so this must only run between steps.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Same values, detached from the tape (no gradient flows through).
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.inner.shape.clone(), self.to_vec(), false)
    }

    /// Two handles referring to the same underlying tensor node.
    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss. Accumulates into every reachable
    /// `requires_grad` leaf; intermediate gradients are dropped as soon as
    /// they have been propagated.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.inner.shape.clone()));
        }
        let topo = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for node in topo.iter().rev() {
            if let Some(back) = &node.inner.backward {
                let g = node.inner.grad.borrow_mut().take();
                if let Some(g) = g {
                    back(&g, &node.inner.parents);
                }
            }
        }
        Ok(())
    }

    /// Post-order over the graph rooted at `self` (parents before children).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative DFS; (node, children_pushed) emulates post-order.
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.inner.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.inner.parents {
                if p.inner.requires_grad && !visited.contains(&p.inner.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}
