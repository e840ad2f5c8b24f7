//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Every operation records its parents and a backward closure; calling
//! [`Tensor::backward`] on a scalar loss replays the graph in reverse and
//! accumulates gradients into every tensor created with `requires_grad`.
//! Graphs are rebuilt each forward pass (define-by-run).

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::element::Element;
use crate::rng::Stream;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` without recording the autodiff graph. Outputs are constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Inputs handed to a backward closure.
pub(crate) struct OpCtx<'a, T: Element> {
    pub grad_out: &'a [T],
    pub out: &'a [T],
    pub parents: &'a [Tensor<T>],
}

type BackwardFn<T> = Box<dyn Fn(&OpCtx<T>)>;

struct Node<T: Element> {
    id: u64,
    op: &'static str,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    needs_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Shared handle to a tensor node. Cloning is cheap and refers to the same
/// storage (and gradient), which is how parameters are shared between the
/// model and the optimizer.
pub struct Tensor<T: Element = f32> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("op", &self.node.op)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn check_finite<T: Element>(op: &'static str, data: &[T]) {
    if !data.iter().all(|v| v.is_finite()) {
        panic!("numeric fault in `{op}`: non-finite values in output");
    }
}

impl<T: Element> Tensor<T> {
    fn new_node(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        needs_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                op,
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                needs_grad,
                parents,
                backward,
            }),
        }
    }

    /// Leaf constant (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self::new_node("leaf", shape.to_vec(), data, false, false, Vec::new(), None)
    }

    /// Leaf parameter: gradients accumulate here.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self::new_node("param", shape.to_vec(), data, true, true, Vec::new(), None)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::ZERO; shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; shape.iter().product()])
    }

    /// Standard-normal values drawn from the given stream (Box-Muller).
    pub fn randn(shape: &[usize], stream: &mut Stream) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(crate::rng_normal(stream))).collect();
        Self::from_vec(shape, data)
    }

    /// Uniform values in [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, stream: &mut Stream) -> Self {
        use rand::Rng;
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(lo + (hi - lo) * stream.gen::<f64>()))
            .collect();
        Self::from_vec(shape, data)
    }

    /// Construct an op output. Panics on non-finite values (numeric fault)
    /// so the failing op is named at the fault site.
    pub(crate) fn op_output(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&OpCtx<T>) + 'static,
    ) -> Self {
        check_finite(op, &data);
        let track = grad_enabled() && parents.iter().any(|p| p.node.needs_grad);
        if track {
            Self::new_node(op, shape, data, false, true, parents, Some(Box::new(backward)))
        } else {
            Self::new_node(op, shape, data, false, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn len(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn op_name(&self) -> &'static str {
        self.node.op
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Borrow the raw data (row-major).
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() requires a scalar, got shape {:?}", self.shape());
        self.node.data.borrow()[0]
    }

    /// Overwrite the values of a leaf tensor (optimizer updates).
    pub fn set_data(&self, new: &[T]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    /// In-place update of a leaf tensor through a closure.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.data.borrow_mut());
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Scale the accumulated gradient in place (gradient clipping).
    pub fn scale_grad(&self, factor: T) {
        if let Some(g) = self.node.grad.borrow_mut().as_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Add a gradient contribution (allocates on first use).
    pub fn accumulate_grad(&self, contribution: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Mutable access to the gradient buffer, zero-initialized on first use.
    pub(crate) fn grad_buf(&self) -> std::cell::RefMut<'_, Vec<T>> {
        let mut slot = self.node.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![T::ZERO; self.len()]);
        }
        std::cell::RefMut::map(slot, |o| o.as_mut().unwrap())
    }

    /// Cut the graph: same values, no history, no gradient flow.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(&self.node.shape.clone(), self.to_vec())
    }

    /// Reverse pass from a scalar loss. Gradients accumulate across calls
    /// until `zero_grad`.
    pub fn backward(&self) {
        assert_eq!(
            self.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shape()
        );
        if !self.node.needs_grad {
            return;
        }
        // Parents are always created before children, so descending id order
        // is a valid reverse topological order.
        let mut visited = std::collections::HashSet::new();
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.node.needs_grad || !visited.insert(t.node.id) {
                continue;
            }
            for p in &t.node.parents {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.node.id.cmp(&a.node.id));

        self.accumulate_grad(&[T::ONE]);
        for t in &nodes {
            let Some(backward) = t.node.backward.as_ref() else { continue };
            let grad = t.node.grad.borrow();
            let Some(grad_out) = grad.as_ref() else { continue };
            let out = t.node.data.borrow();
            backward(&OpCtx { grad_out, out: &out, parents: &t.node.parents });
        }
        // Free intermediate gradients; keep only leaf gradients.
        for t in &nodes {
            if !t.node.requires_grad {
                *t.node.grad.borrow_mut() = None;
            }
        }
    }

    /// Convert elements to f64 (no gradient tracking).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.borrow().iter().map(|v| v.to_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let loss = w.mul(&w).sum_all();
        loss.backward();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let loss = w.mul(&w).sum_all();
        loss.backward();
        loss.backward();
        assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn detached_branch_zero_gradient() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let d = w.detach();
        let loss = d.mul(&d).sum_all();
        loss.backward();
        assert!(w.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "backward requires a scalar")]
    fn backward_on_non_scalar_panics() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        w.mul(&w).backward();
    }

    #[test]
    #[should_panic(expected = "numeric fault in `ln`")]
    fn non_finite_output_names_op() {
        let w = Tensor::<f64>::param(&[1], vec![-1.0]);
        let _ = w.ln();
    }

    #[test]
    fn no_grad_produces_constants() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let y = no_grad(|| w.mul(&w).sum_all());
        y.backward(); // no-op: y does not need grad
        assert!(w.grad().is_none());
    }
}
