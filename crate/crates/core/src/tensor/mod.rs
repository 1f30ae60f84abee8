//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to an immutable-shape node. Nodes
//! produced by an operation remember the operation's inputs and a backward
//! closure; calling [`Tensor::backward`] on a scalar walks that graph once in
//! reverse topological order and accumulates gradients into every leaf that
//! requires them. Gradients accumulate across calls until [`Tensor::zero_grad`].
//!
//! Image tensors use the `N, C, H, W` layout throughout.

mod element;
pub mod gradcheck;
pub(crate) mod ops;
mod rng;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{MappedRwLockReadGuard, Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

pub use element::{DType, Element};
pub use gradcheck::{grad_check, grad_check_leaves, GradCheckReport};
pub use ops::resize::cubic_kernel;
pub use rng::{Rng, RngState};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any autodiff lineage on this thread.
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

/// Input gradients produced by a backward closure, one slot per input.
pub(crate) type InputGrads<T> = Vec<Option<Vec<T>>>;

/// Signature of an operation's vector-Jacobian product.
///
/// Receives the gradient w.r.t. the output, the output values and the
/// operation inputs; returns a gradient for each input (`None` if the input
/// does not need one).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T], &[Tensor<T>]) -> InputGrads<T> + Send + Sync>;

struct GradFn<T: Element> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    requires_grad: AtomicBool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

// Long chains would otherwise be dropped recursively, one stack frame per node.
impl<T: Element> Drop for Node<T> {
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else { return };
        let mut pending = gf.inputs;
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.node) {
                if let Some(gf) = node.grad_fn.take() {
                    pending.extend(gf.inputs);
                }
            }
        }
    }
}

pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map_or("leaf", |g| g.op);
        write!(
            f,
            "Tensor<{:?}>(shape={:?}, op={}, requires_grad={})",
            T::DTYPE,
            self.node.shape,
            op,
            self.requires_grad()
        )
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad: AtomicBool::new(requires_grad),
                grad: Mutex::new(None),
                grad_fn: None,
            }),
        }
    }

    /// Builds a tensor from row-major data.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "new",
                format!("shape {shape:?} needs {} elements, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Builds a learnable leaf (`requires_grad = true`).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], vec![], false)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Normally distributed entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| T::of(rng.normal() * std))
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| T::of(rng.uniform_range(lo, hi)))
    }

    /// Creates the result of an operation, recording lineage when gradient
    /// tracking is enabled and at least one input requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if !track {
            return Self::leaf(data, shape, false);
        }
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad: AtomicBool::new(true),
                grad: Mutex::new(None),
                grad_fn: Some(GradFn { op, inputs, backward }),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    /// Extent of axis `i`; negative indices count from the end.
    pub fn dim(&self, i: isize) -> usize {
        let r = self.rank() as isize;
        let i = if i < 0 { r + i } else { i };
        self.node.shape[i as usize]
    }

    pub fn data(&self) -> MappedRwLockReadGuard<'_, [T]> {
        RwLockReadGuard::map(self.node.data.read(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.read().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.read().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape())));
        }
        Ok(self.node.data.read()[0])
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.node.grad_fn.as_ref().map_or("leaf", |g| g.op)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad.load(Ordering::Relaxed)
    }

    /// Toggles gradient tracking on a leaf. Used to freeze one network while
    /// the other is updated.
    pub fn set_requires_grad(&self, on: bool) {
        assert!(self.is_leaf(), "requires_grad can only be set on leaves");
        self.node.requires_grad.store(on, Ordering::Relaxed);
    }

    /// Builder-style variant of [`set_requires_grad`](Self::set_requires_grad).
    pub fn with_grad(self) -> Self {
        self.set_requires_grad(true);
        self
    }

    /// Replaces the contents of a leaf in place (optimizer updates, finite
    /// differences). Shape is fixed.
    pub fn assign(&self, data: Vec<T>) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Usage("assign() on a non-leaf tensor".into()));
        }
        if data.len() != self.numel() {
            return Err(Error::dim(
                "assign",
                format!("expected {} elements, got {}", self.numel(), data.len()),
            ));
        }
        *self.node.data.write() = data;
        Ok(())
    }

    /// Mutates a leaf's contents in place.
    pub fn update(&self, f: impl FnOnce(&mut [T])) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Usage("update() on a non-leaf tensor".into()));
        }
        f(self.node.data.write().as_mut_slice());
        Ok(())
    }

    /// A lineage-free copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape().to_vec(), false)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().clone()
    }

    /// Gradient as a tensor, all zeros when none has been accumulated.
    pub fn grad_tensor(&self) -> Tensor<T> {
        match self.grad() {
            Some(g) => Self::leaf(g, self.shape().to_vec(), false),
            None => Self::zeros(self.shape()),
        }
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock() = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from this scalar, accumulating into leaf gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    if t.requires_grad() {
                        t.accumulate_grad(&g);
                    }
                }
                Some(gf) => {
                    let out = t.node.data.read();
                    let input_grads = (gf.backward)(&g, &out, &gf.inputs);
                    drop(out);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op);
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", gf.op);
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph: every node after its inputs.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference, in double precision.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        let a = self.data();
        let b = other.data();
        Ok(a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Converts to another element type. The result is a fresh leaf.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::leaf(
            self.data().iter().map(|v| U::of(v.as_f64())).collect(),
            self.shape().to_vec(),
            false,
        )
    }
}
