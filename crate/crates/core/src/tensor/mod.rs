//! Minimal dense f64 tensor with tape-based reverse-mode automatic
//! differentiation.
//!
//! Tensors are row-major, immutable once created except through recorded
//! operations (parameter updates between training steps mutate data in
//! place via [`Tensor::set_data`]). All arithmetic lives on [`Tape`]; one
//! tape is used per training step and replayed in reverse for gradients.
//!
//! Contract violations (shape mismatches, invalid parameters, non-scalar
//! loss) panic with a message naming the offending shapes; they are
//! programmer errors, not runtime conditions.

pub mod gradcheck;
mod tape;

pub use tape::Tape;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorData {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
}

/// Dense row-major f64 tensor. Cheap to clone (shared storage).
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorData>,
}

impl Tensor {
    fn new(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor: shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            inner: Rc::new(TensorData {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data, false)
    }

    /// Leaf tensor that participates in gradient computation (a parameter).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data, true)
    }

    pub(crate) fn result(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor::new(shape, data, requires_grad)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Scalar value; panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.len(),
            1,
            "item: tensor of shape {:?} is not a scalar",
            self.shape()
        );
        self.inner.data.borrow()[0]
    }

    /// Overwrites the stored values. Intended for optimizer updates on leaf
    /// parameters between tapes; never call on a tensor recorded on a live
    /// tape.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(
            d.len(),
            values.len(),
            "set_data: expected {} values for shape {:?}, got {}",
            d.len(),
            self.shape(),
            values.len()
        );
        d.copy_from_slice(values);
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accum_grad(&self, delta: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    pub(crate) fn seed_grad(&self, value: f64) {
        *self.inner.grad.borrow_mut() = Some(vec![value; self.len()]);
    }

    /// Gradient snapshot used by backward closures; None when this tensor is
    /// not on the path to the loss.
    pub(crate) fn grad_snapshot(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.data.borrow();
        let preview: Vec<f64> = d.iter().take(8).copied().collect();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, data={:?}{})",
            self.shape(),
            self.requires_grad(),
            preview,
            if d.len() > 8 { ", ..." } else { "" }
        )
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("broadcast: incompatible shapes {:?} and {:?}", a, b),
        };
    }
    out
}

/// Per-output-dimension strides into an input tensor being broadcast to
/// `out_shape`; broadcast dimensions get stride 0.
pub(crate) fn broadcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(in_shape);
    let offset = out_shape.len() - in_shape.len();
    let mut s = vec![0usize; out_shape.len()];
    for i in 0..in_shape.len() {
        s[offset + i] = if in_shape[i] == 1 { 0 } else { in_strides[i] };
    }
    s
}

/// Odometer over a shape, yielding the linear offsets of one or more
/// broadcast inputs alongside the output linear index.
pub(crate) fn for_each_broadcast<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: F,
) {
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for lin in 0..numel {
        f(lin, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}
