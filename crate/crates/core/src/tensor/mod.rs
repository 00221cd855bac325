//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The graph is built define-by-run: each op allocates a fresh node that
//! owns its output buffer, keeps handles to its parents, and carries a
//! closure computing the vector-Jacobian product. Handles are `Rc`-shared
//! and deliberately not `Send` — parallel callers build whole graphs
//! inside their own task. Tensor data is immutable after construction;
//! only gradient buffers mutate, behind `RefCell`.
//!
//! Conventions:
//! - shapes are explicit `Vec<usize>`; a scalar has shape `[1]`;
//! - every op validates shapes and checks its output for NaN/inf,
//!   returning `Err` instead of poisoning the graph;
//! - gradients accumulate with `+=`, so a tensor consumed twice gets the
//!   sum of both paths; callers reset buffers between backward passes;
//! - `backward` runs once per graph root and errors on reuse.

mod gradcheck;
mod ops;
mod optim;

pub use gradcheck::{gradcheck, numeric_grad, GradCheckError};
pub use optim::{AdamConfig, AdamState, CosineSchedule};

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Vector-Jacobian product: receives the node it belongs to plus the
/// node's accumulated output gradient, and adds contributions into the
/// parents' gradient buffers.
type Vjp = Box<dyn Fn(&Inner, &[f64])>;

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    vjp: Option<Vjp>,
    /// Set once `backward` has run from this node.
    consumed: Cell<bool>,
}

pub struct Tensor {
    inner: Rc<Inner>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish_non_exhaustive()
    }
}

fn check_shape_data(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.is_empty() || numel == 0 {
        return Err(Error::invalid("shape", format!("empty or zero-sized shape {shape:?}")));
    }
    if numel != len {
        return Err(Error::invalid(
            "shape",
            format!("shape {shape:?} wants {numel} elements, data has {len}"),
        ));
    }
    Ok(())
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        check_shape_data(shape, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                vjp: None,
                consumed: Cell::new(false),
            }),
        })
    }

    /// Constant leaf: no gradient is tracked through it.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, false)
    }

    /// Trainable leaf: participates in `backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, true)
    }

    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; n], shape)
    }

    /// Internal op-node constructor. Records the graph edge only when some
    /// parent tracks gradients; otherwise the result is a plain constant,
    /// which keeps no-grad evaluation graph-free.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        vjp: Vjp,
    ) -> Result<Tensor> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let (parents, vjp) = if requires_grad { (parents, Some(vjp)) } else { (Vec::new(), None) };
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                vjp,
                consumed: Cell::new(false),
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid("tensor", format!("item() on shape {:?}", self.shape())));
        }
        Ok(self.inner.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Snapshot of the accumulated gradient, if any has been written.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Same data, detached from the graph (constant leaf).
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.inner.data.clone(), &self.inner.shape, false)
            .expect("detach of a valid tensor cannot fail")
    }

    /// Accumulate into this tensor's gradient buffer (lazily zero-filled)
    /// if it tracks gradients.
    pub(crate) fn if_grad(&self, f: impl FnOnce(&mut [f64])) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.inner.data.len()]);
        f(buf);
    }

    /// Reverse-mode sweep from a scalar root. Seeds the root gradient
    /// with 1.0 and walks consumers before producers. One shot: a second
    /// call on the same root reports the graph as consumed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Backward(format!(
                "root must be a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.inner.requires_grad {
            return Err(Error::Backward("root does not require gradients".into()));
        }
        if self.inner.consumed.get() {
            return Err(Error::Backward("graph already consumed by an earlier backward".into()));
        }
        self.inner.consumed.set(true);

        self.if_grad(|g| g[0] += 1.0);
        for node in self.topo_order() {
            let inner: &Inner = &node.inner;
            if let Some(vjp) = &inner.vjp {
                let guard = inner.grad.borrow();
                if let Some(g) = guard.as_ref() {
                    vjp(inner, g);
                }
            }
        }
        Ok(())
    }

    /// Reverse post-order DFS over parent edges: every consumer appears
    /// before each of its producers. Iterative, so graph depth is not
    /// bounded by the thread stack.
    fn topo_order(&self) -> Vec<Tensor> {
        enum Frame {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut visited: HashSet<usize> = HashSet::new();
        let mut post = Vec::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    let key = Rc::as_ptr(&t.inner) as usize;
                    if !visited.insert(key) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.inner.parents {
                        if p.inner.requires_grad {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => post.push(t),
            }
        }
        post.reverse();
        post
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_backward() {
        // loss = (x * y + x).sum ; d/dx = y + 1, d/dy = x
        let x = Tensor::param(vec![2.0, 3.0], &[2]).unwrap();
        let y = Tensor::param(vec![5.0, 7.0], &[2]).unwrap();
        let loss = x.mul(&y).unwrap().add(&x).unwrap().sum_all().unwrap();
        assert_eq!(loss.item().unwrap(), 2.0 * 5.0 + 2.0 + 3.0 * 7.0 + 3.0);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, 8.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn fanout_accumulates_both_paths() {
        // loss = x*x : dx = 2x through two uses of the same handle
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn diamond_graph_sums_paths() {
        // a = x+x ; b = x*x ; loss = a+b ; dx = 2 + 2x
        let x = Tensor::param(vec![4.0], &[1]).unwrap();
        let a = x.add(&x).unwrap();
        let b = x.mul(&x).unwrap();
        let loss = a.add(&b).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0 + 8.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_and_reuse() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.add(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::Backward(_))));
        let loss = y.sum_all().unwrap();
        loss.backward().unwrap();
        let again = loss.backward();
        assert!(matches!(again, Err(Error::Backward(_))));
    }

    #[test]
    fn constants_record_no_graph() {
        let a = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        let c = a.add(&b).unwrap();
        assert!(!c.requires_grad());
        assert!(c.inner.parents.is_empty());
        assert!(c.inner.vjp.is_none());
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let d = x.mul(&x).unwrap().detach();
        let loss = d.mul(&x).unwrap();
        loss.backward().unwrap();
        // Only the direct factor contributes: d(d*x)/dx = d = 4.
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn nonfinite_forward_is_an_error() {
        let x = Tensor::param(vec![1e308], &[1]).unwrap();
        let err = x.mul(&x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul" }));
    }

    #[test]
    fn grads_accumulate_across_backwards_until_zeroed() {
        let x = Tensor::param(vec![1.5], &[1]).unwrap();
        let l1 = x.mul(&x).unwrap();
        l1.backward().unwrap();
        let l2 = x.mul(&x).unwrap();
        l2.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]); // 3.0 twice
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
