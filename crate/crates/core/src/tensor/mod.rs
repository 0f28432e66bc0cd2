//! Dense tensors with reverse-mode gradient propagation.
//!
//! A [`Tensor`] is a cheap handle to an immutable node of a dynamically
//! recorded graph. Operations on tensors that require gradients remember
//! their inputs and a backward closure; [`Tensor::backward`] walks the
//! graph in reverse topological order and accumulates `d(loss)/d(node)`
//! into every participating node.
//!
//! Leaf tensors (parameters) are the only nodes whose values may change
//! after creation, through [`Tensor::update`]. Updating a leaf while a graph
//! that uses it is still awaiting backward is a logic error.

mod scalar;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

pub use scalar::{Precision, Scalar};

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph; every result is a constant.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct BackwardCtx<'a, T: Scalar> {
    pub grad_out: &'a [T],
    pub out: &'a [T],
    pub parents: &'a [Tensor<T>],
}

/// Returns one optional gradient per parent, in parent order.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            parents,
            backward,
        }))
    }

    /// Creates a constant (non-differentiable) tensor.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {numel} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Creates a leaf tensor that accumulates gradients.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        let node = Arc::into_inner(t.0).expect("fresh tensor is uniquely owned");
        Ok(Self::from_node(
            node.shape,
            node.data.into_inner().expect("unpoisoned"),
            true,
            Vec::new(),
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_node(shape.to_vec(), vec![T::zero(); n], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_node(shape.to_vec(), vec![value; n], false, Vec::new(), None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_node(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Builds the result of an operation. Graph edges are kept only when
    /// recording is enabled and at least one input requires gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::from_node(shape, data, true, parents, Some(backward))
        } else {
            Self::from_node(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    /// Read access to the values.
    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    /// In-place mutation of a leaf's values (used by optimizers).
    pub fn update(&self, f: impl FnOnce(&mut [T])) {
        assert!(
            self.0.backward.is_none(),
            "only leaf tensors may be updated in place"
        );
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut d);
    }

    /// Accumulated gradient; `None` iff the tensor does not require grad.
    pub fn grad(&self) -> Option<Vec<T>> {
        if !self.requires_grad() {
            return None;
        }
        let g = self.0.grad.lock().expect("grad lock poisoned");
        Some(g.clone().unwrap_or_else(|| vec![T::zero(); self.numel()]))
    }

    /// Runs `f` on the gradient buffer without copying it.
    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[T]>) -> R) -> R {
        let g = self.0.grad.lock().expect("grad lock poisoned");
        f(g.as_deref())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Constant copy of this tensor with no graph history.
    pub fn detach(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.to_vec(), false, Vec::new(), None)
    }

    /// Converts to another precision as a constant.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64_lossy(v.as_f64()))
            .collect();
        Tensor::from_node(self.0.shape.clone(), data, false, Vec::new(), None)
    }

    /// Propagates `d(self)/d(node)` into every reachable node that requires
    /// gradients. Gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(bw) = &node.0.backward {
                let out = node.data();
                let ctx = BackwardCtx {
                    grad_out: &g,
                    out: &out,
                    parents: &node.0.parents,
                };
                let parent_grads = bw(&ctx);
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel());
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                        None => {
                            pending.insert(parent.id(), pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.lock().expect("grad lock poisoned");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require gradients, parents first.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let x = Tensor::<f64>::parameter(&[3], vec![1.0, -2.0, 5.0]).unwrap();
        let loss = crate::ops::sum(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let loss = crate::ops::sum(&crate::ops::mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_twice_doubles() {
        let x = Tensor::<f64>::parameter(&[2], vec![0.3, -1.7]).unwrap();
        let y = crate::ops::mul(&x, &x).unwrap();
        let loss = crate::ops::sum(&crate::ops::silu(&y));
        loss.backward().unwrap();
        let g1 = x.grad().unwrap();
        loss.backward().unwrap();
        let g2 = x.grad().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let x = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn grad_present_iff_requires_grad() {
        let c = Tensor::<f32>::ones(&[2, 2]);
        assert!(c.grad().is_none());
        let p = Tensor::<f32>::parameter(&[2, 2], vec![0.0; 4]).unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| crate::ops::mul(&x, &x).unwrap());
        assert!(!y.requires_grad());
    }

    #[test]
    fn mismatched_data_length_rejected() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }
}
